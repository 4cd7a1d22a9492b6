//! HTTP API for the browser annotation tool.
//!
//! Tracks, annotations and job outputs live in a flat data directory:
//!
//! ```text
//! <data_dir>/tracks/<track_id>/mixture.wav
//! <data_dir>/tracks/<track_id>/annotations.json
//! <data_dir>/jobs/<job_id>/source<g>.wav
//! <data_dir>/jobs/<job_id>/trace.csv
//! ```
//!
//! Tracks and their annotations are reloaded on startup; jobs are not.
//! Solver jobs run on blocking threads, at most `workers` at a time.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::annotation::AnnotationSet;
use crate::error::{Error, Result};
use crate::separate::{separate, SeparateRequest, SolverMethod};
use crate::spectral::{power_spectrogram, stft, StftParams};
use crate::trace::{SolveTrace, TraceRecord};
use crate::wav;

const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;
const DEFAULT_DB_FLOOR: f64 = -60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub iterations: usize,
    pub elapsed_seconds: f64,
    pub best_objective: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    /// URLs of the per-source WAV files.
    pub sources: Vec<String>,
    pub trace: String,
    /// Only present when reference sources are known; uploaded tracks have none.
    pub eval: Option<crate::metrics::BssEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub track_id: String,
    pub method: SolverMethod,
    pub config: SeparateRequest,
    pub state: JobState,
    pub progress: JobProgress,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

struct JobEntry {
    job: Job,
    records: Vec<TraceRecord>,
}

struct Track {
    samples: Vec<f64>,
    annotations: Mutex<Option<Bytes>>,
    /// Most recent job that finished successfully.
    latest_done: Mutex<Option<String>>,
}

pub struct AppState {
    data_dir: PathBuf,
    params: StftParams,
    tracks: RwLock<HashMap<String, Arc<Track>>>,
    jobs: RwLock<HashMap<String, Arc<Mutex<JobEntry>>>>,
    workers: Arc<Semaphore>,
    next_track: AtomicU64,
    next_job: AtomicU64,
}

impl AppState {
    /// Opens (creating if needed) a data directory and reloads its tracks.
    pub fn open(data_dir: impl Into<PathBuf>, workers: usize) -> Result<Arc<Self>> {
        if workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        let data_dir = data_dir.into();
        let tracks_dir = data_dir.join("tracks");
        std::fs::create_dir_all(&tracks_dir)?;
        std::fs::create_dir_all(data_dir.join("jobs"))?;
        let mut tracks = HashMap::new();
        let mut max_id = 0;
        for entry in std::fs::read_dir(&tracks_dir)? {
            let dir = entry?.path();
            let Some(id) = dir.file_name().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let Ok(audio) = wav::read_wav(dir.join("mixture.wav")) else {
                continue;
            };
            let annotations = std::fs::read(dir.join("annotations.json")).ok().map(Bytes::from);
            if let Some(k) = id.strip_prefix("track-").and_then(|k| k.parse::<u64>().ok()) {
                max_id = max_id.max(k);
            }
            tracks.insert(
                id,
                Arc::new(Track {
                    samples: audio.samples,
                    annotations: Mutex::new(annotations),
                    latest_done: Mutex::new(None),
                }),
            );
        }
        info!("loaded {} track(s) from {}", tracks.len(), data_dir.display());
        Ok(Arc::new(Self {
            data_dir,
            params: StftParams::default(),
            tracks: RwLock::new(tracks),
            jobs: RwLock::new(HashMap::new()),
            workers: Arc::new(Semaphore::new(workers)),
            next_track: AtomicU64::new(max_id + 1),
            next_job: AtomicU64::new(1),
        }))
    }

    fn track(&self, id: &str) -> std::result::Result<Arc<Track>, ApiError> {
        self.tracks
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no track {id}")))
    }

    fn job(&self, id: &str) -> std::result::Result<Arc<Mutex<JobEntry>>, ApiError> {
        self.jobs
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no job {id}")))
    }

    fn track_dir(&self, id: &str) -> PathBuf {
        self.data_dir.join("tracks").join(id)
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.data_dir.join("jobs").join(id)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) | Error::Numerical { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/tracks", post(upload_track))
        .route("/tracks/{id}/spectrogram", get(get_spectrogram))
        .route("/tracks/{id}/annotations", get(get_annotations).put(put_annotations))
        .route("/tracks/{id}/separate", post(start_separation))
        .route("/tracks/{id}/sources/{file}", get(get_source))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/trace.csv", get(get_trace))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf, workers: usize) -> Result<()> {
    let state = AppState::open(data_dir, workers)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot bind {addr}: {e}"))))?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Serialize)]
struct TrackCreated {
    track_id: String,
}

async fn upload_track(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let audio = wav::read_wav_from(std::io::Cursor::new(body))?;
    let rate = state.params.sample_rate;
    let samples = wav::resample(&audio.samples, audio.sample_rate, rate);
    if samples.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty audio"));
    }
    let id = format!("track-{}", state.next_track.fetch_add(1, Ordering::SeqCst));
    let dir = state.track_dir(&id);
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    wav::write_wav(dir.join("mixture.wav"), &samples, rate)?;
    // keep exactly what was written so a reload sees the same samples
    let samples = wav::read_wav(dir.join("mixture.wav"))?.samples;
    state.tracks.write().unwrap().insert(
        id.clone(),
        Arc::new(Track {
            samples,
            annotations: Mutex::new(None),
            latest_done: Mutex::new(None),
        }),
    );
    info!("stored {id}");
    Ok((StatusCode::CREATED, Json(TrackCreated { track_id: id })).into_response())
}

#[derive(Debug, Deserialize)]
pub struct SpectrogramQuery {
    pub max_cols: Option<usize>,
    pub db_floor: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpectrogramView {
    #[serde(rename = "F")]
    pub f: usize,
    /// STFT frames before downsampling.
    #[serde(rename = "N")]
    pub n: usize,
    pub hop_seconds: f64,
    pub bin_hz: f64,
    /// Columns in `values`, each pooling `frames_per_col` frames.
    pub cols: usize,
    pub frames_per_col: usize,
    /// Power in dB, row-major with one row per frequency bin.
    pub values: Vec<f64>,
}

/// Log-power grid, max-pooled over groups of frames so that it has at most
/// `max_cols` columns and floored at `db_floor` dB.
pub fn spectrogram_view(
    samples: &[f64],
    params: &StftParams,
    max_cols: Option<usize>,
    db_floor: f64,
) -> Result<SpectrogramView> {
    let power = power_spectrogram(&stft(samples, params)?);
    let (f, n) = power.shape();
    let max_cols = max_cols.unwrap_or(n).max(1);
    let per = n.div_ceil(max_cols).max(1);
    let cols = n.div_ceil(per);
    let v = power.values();
    let mut values = Vec::with_capacity(f * cols);
    for row in 0..f {
        for c in 0..cols {
            let peak = (c * per..((c + 1) * per).min(n))
                .map(|j| v[(row, j)])
                .fold(0.0, f64::max);
            let db = if peak > 0.0 { 10.0 * peak.log10() } else { f64::NEG_INFINITY };
            values.push(db.max(db_floor));
        }
    }
    Ok(SpectrogramView {
        f,
        n,
        hop_seconds: params.hop_seconds(),
        bin_hz: params.bin_hz(),
        cols,
        frames_per_col: per,
        values,
    })
}

async fn get_spectrogram(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SpectrogramQuery>,
) -> ApiResult<Json<SpectrogramView>> {
    let track = state.track(&id)?;
    let floor = q.db_floor.unwrap_or(DEFAULT_DB_FLOOR);
    if !floor.is_finite() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "db_floor must be finite"));
    }
    Ok(Json(spectrogram_view(&track.samples, &state.params, q.max_cols, floor)?))
}

fn track_shape(state: &AppState, track: &Track) -> (usize, usize) {
    (state.params.num_bins(), state.params.num_frames(track.samples.len()))
}

async fn put_annotations(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<StatusCode> {
    let track = state.track(&id)?;
    let text = std::str::from_utf8(&body)
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "annotations must be UTF-8 JSON"))?;
    let ann = AnnotationSet::from_json(text)?;
    let shape = track_shape(&state, &track);
    if ann.shape != shape {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("annotation shape {:?} does not match spectrogram {:?}", ann.shape, shape),
        ));
    }
    let violations = ann.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, list.join("; ")));
    }
    std::fs::write(state.track_dir(&id).join("annotations.json"), &body).map_err(Error::from)?;
    *track.annotations.lock().unwrap() = Some(body);
    Ok(StatusCode::NO_CONTENT)
}

async fn get_annotations(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let track = state.track(&id)?;
    let body = track
        .annotations
        .lock()
        .unwrap()
        .clone()
        .ok_or_else(|| ApiError::not_found(format!("no annotations for {id}")))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

#[derive(Serialize)]
struct JobCreated {
    job_id: String,
}

async fn start_separation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(request): Json<SeparateRequest>,
) -> ApiResult<Response> {
    let track = state.track(&id)?;
    request.validate()?;
    let body = track
        .annotations
        .lock()
        .unwrap()
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("track {id} has no annotations")))?;
    let ann = AnnotationSet::from_json(std::str::from_utf8(&body).expect("validated on upload"))?;

    let job_id = format!("job-{}", state.next_job.fetch_add(1, Ordering::SeqCst));
    let entry = Arc::new(Mutex::new(JobEntry {
        job: Job {
            id: job_id.clone(),
            track_id: id.clone(),
            method: request.method,
            config: request.clone(),
            state: JobState::Queued,
            progress: JobProgress::default(),
            result: None,
            error: None,
        },
        records: Vec::new(),
    }));
    state.jobs.write().unwrap().insert(job_id.clone(), entry.clone());
    tokio::spawn(run_job(state.clone(), track, ann, request, entry));
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })).into_response())
}

async fn run_job(
    state: Arc<AppState>,
    track: Arc<Track>,
    ann: AnnotationSet,
    request: SeparateRequest,
    entry: Arc<Mutex<JobEntry>>,
) {
    let _permit = state.workers.clone().acquire_owned().await.expect("semaphore is never closed");
    entry.lock().unwrap().job.state = JobState::Running;
    let (job_id, track_id) = {
        let e = entry.lock().unwrap();
        (e.job.id.clone(), e.job.track_id.clone())
    };
    let work_entry = entry.clone();
    let work_state = state.clone();
    let work_id = job_id.clone();
    let outcome = tokio::task::spawn_blocking(move || -> Result<usize> {
        let mut on_record = |r: &TraceRecord| {
            let mut e = work_entry.lock().unwrap();
            e.records.push(*r);
            e.job.progress = JobProgress {
                iterations: e.records.len() - 1,
                elapsed_seconds: r.seconds.max(e.job.progress.elapsed_seconds),
                best_objective: Some(r.best_objective),
            };
        };
        let out = separate(&track.samples, &work_state.params, &ann, &request, &mut on_record)?;
        let dir = work_state.job_dir(&work_id);
        std::fs::create_dir_all(&dir)?;
        for (g, s) in out.sources.iter().enumerate() {
            wav::write_wav(dir.join(format!("source{g}.wav")), s, work_state.params.sample_rate)?;
        }
        out.solution.trace.write_csv(std::fs::File::create(dir.join("trace.csv"))?)?;
        Ok(out.sources.len())
    })
    .await;

    let mut e = entry.lock().unwrap();
    match outcome {
        Ok(Ok(num_sources)) => {
            e.job.state = JobState::Done;
            e.job.result = Some(JobResult {
                sources: (0..num_sources)
                    .map(|g| format!("/tracks/{track_id}/sources/{g}.wav"))
                    .collect(),
                trace: format!("/jobs/{job_id}/trace.csv"),
                eval: None,
            });
            drop(e);
            if let Ok(track) = state.track(&track_id) {
                *track.latest_done.lock().unwrap() = Some(job_id.clone());
            }
            info!("{job_id} done");
        }
        Ok(Err(err)) => {
            error!("{job_id} failed: {err}");
            e.job.state = JobState::Failed;
            e.job.error = Some(err.to_string());
        }
        Err(join) => {
            error!("{job_id} panicked: {join}");
            e.job.state = JobState::Failed;
            e.job.error = Some(join.to_string());
        }
    }
}

async fn get_job(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Job>> {
    let entry = state.job(&id)?;
    let job = entry.lock().unwrap().job.clone();
    Ok(Json(job))
}

/// Trace of a job so far; complete once the job is done.
async fn get_trace(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let entry = state.job(&id)?;
    let records = entry.lock().unwrap().records.clone();
    let csv = SolveTrace {
        records,
        best_record: 0,
    }
    .to_csv_string();
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn get_source(
    State(state): State<Arc<AppState>>,
    UrlPath((id, file)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let track = state.track(&id)?;
    let g: usize = file
        .strip_suffix(".wav")
        .and_then(|g| g.parse().ok())
        .ok_or_else(|| ApiError::not_found(format!("no source {file}")))?;
    let job_id = track
        .latest_done
        .lock()
        .unwrap()
        .clone()
        .ok_or_else(|| ApiError::not_found(format!("no finished separation for {id}")))?;
    let path = state.job_dir(&job_id).join(format!("source{g}.wav"));
    let bytes = read_if_exists(&path)?.ok_or_else(|| ApiError::not_found(format!("no source {g}")))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

fn read_if_exists(path: &Path) -> ApiResult<Option<Vec<u8>>> {
    match std::fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::from(e).into()),
    }
}
