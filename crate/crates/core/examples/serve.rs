//! Starts the HTTP service with the demo track preloaded.
//!
//!     cargo run --release --example serve -- [port] [data_dir]
//!
//! Then, for instance:
//!
//!     curl localhost:8080/tracks/track-1/spectrogram?max_cols=200
//!     curl -X POST localhost:8080/tracks/track-1/separate \
//!          -H 'content-type: application/json' \
//!          -d '{"method":"lownuc","budget_seconds":5}'

use std::path::PathBuf;

use nucsep::synth::demo_track;
use nucsep::wav;

#[tokio::main]
async fn main() -> nucsep::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let port: u16 = args.next().map_or(8080, |p| p.parse().expect("port"));
    let data_dir = PathBuf::from(args.next().unwrap_or_else(|| "nucsep_data".into()));

    let demo_dir = data_dir.join("tracks").join("track-1");
    if !demo_dir.exists() {
        std::fs::create_dir_all(&demo_dir)?;
        let track = demo_track();
        wav::write_wav(demo_dir.join("mixture.wav"), &track.mixture, track.sample_rate)?;
    }
    nucsep::service::serve(([127, 0, 0, 1], port).into(), data_dir, 1).await
}
