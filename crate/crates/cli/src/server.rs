//! Local HTTP service for the editor: topology document, validation and
//! asynchronous jobs with polling.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use hydrozone::calibration::{CalibrationConfig, MeasurementSet};
use hydrozone::engine::Fidelity;
use hydrozone::series::Table;
use hydrozone::topology::{validate_topology, BuildingTopology, ValidationReport};
use hydrozone::weather::WeatherSeries;

use crate::jobs::{JobKind, JobRecord, JobStatus, JobStore};
use crate::workflows::{
    bench_to_dir, calibrate_to_dir, parse_instant, simulate_to_dir, CalibrateJob, RunConfig, SimulateJob, AFTER_CSV,
    REPORT_JSON, RESULT_CSV,
};

/// Points per channel returned by the result endpoint.
pub const MAX_POINTS: usize = 5000;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<JobStore>,
    pub slots: Arc<Semaphore>,
}

impl AppState {
    pub fn new(store: JobStore, max_jobs: usize) -> Self {
        Self {
            store: Arc::new(store),
            slots: Arc::new(Semaphore::new(max_jobs.max(1))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/topology", get(get_topology).put(put_topology))
        .route("/validate", post(validate))
        .route("/jobs", post(post_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/result", get(get_result))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

struct ApiError(StatusCode, Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn bad_request(msg: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, json!({ "error": msg.to_string() }))
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() }))
}

fn invalid(report: ValidationReport) -> ApiError {
    ApiError(
        StatusCode::BAD_REQUEST,
        json!({ "error": "topology is invalid", "violations": report.violations }),
    )
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed body: {e}")))
}

async fn get_topology(State(s): State<AppState>) -> Result<Json<BuildingTopology>, ApiError> {
    match s.store.read_topology().map_err(internal)? {
        Some(t) => Ok(Json(t)),
        None => Err(ApiError(StatusCode::NOT_FOUND, json!({ "error": "no topology stored" }))),
    }
}

async fn put_topology(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let topo: BuildingTopology = parse_json(&body)?;
    if !s.store.replace_topology(&topo).map_err(internal)? {
        return Err(ApiError(
            StatusCode::CONFLICT,
            json!({ "error": "a queued or running job uses the stored topology" }),
        ));
    }
    let report = validate_topology(&topo);
    Ok(Json(json!({ "stored": true, "valid": report.is_valid(), "violations": report.violations })))
}

async fn validate(body: Bytes) -> Result<Json<Value>, ApiError> {
    let topo: BuildingTopology = parse_json(&body)?;
    let report = validate_topology(&topo);
    Ok(Json(json!({ "valid": report.is_valid(), "violations": report.violations })))
}

fn default_fidelity() -> Fidelity {
    Fidelity::LoFi
}

/// Body of `POST /jobs`. Files may be given inline (`*_csv`, `*_toml`) or
/// as server-side paths.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum JobRequest {
    Simulate {
        topology: Option<BuildingTopology>,
        weather_csv: Option<String>,
        weather: Option<PathBuf>,
        inputs_csv: Option<String>,
        #[serde(default = "default_fidelity")]
        fidelity: Fidelity,
        from: String,
        to: String,
        #[serde(default)]
        config: RunConfig,
    },
    Calibrate {
        topology: Option<BuildingTopology>,
        meas_csv: Option<String>,
        meas: Option<PathBuf>,
        config_toml: Option<String>,
        #[serde(default)]
        run: RunConfig,
    },
    Benchmark {
        scenario: PathBuf,
    },
}

type Work = Box<dyn FnOnce(Option<BuildingTopology>, &Path) -> anyhow::Result<Value> + Send>;

fn text_or_file(inline: Option<String>, path: Option<PathBuf>, what: &str) -> Result<String, ApiError> {
    match (inline, path) {
        (Some(t), None) => Ok(t),
        (None, Some(p)) => std::fs::read_to_string(&p).map_err(|e| bad_request(format!("{what} {}: {e}", p.display()))),
        _ => Err(bad_request(format!("give exactly one of {what}_csv or {what}"))),
    }
}

/// Parses every input up front so that bad requests fail with 400 before a
/// job exists.
fn prepare(req: JobRequest) -> Result<(JobKind, Option<Option<BuildingTopology>>, Work), ApiError> {
    match req {
        JobRequest::Simulate {
            topology,
            weather_csv,
            weather,
            inputs_csv,
            fidelity,
            from,
            to,
            config,
        } => {
            let text = text_or_file(weather_csv, weather, "weather")?;
            let weather = WeatherSeries::read(text.as_bytes(), &config.site).map_err(bad_request)?;
            let inputs = inputs_csv
                .map(|t| Table::read(t.as_bytes()))
                .transpose()
                .map_err(bad_request)?;
            let (year, t0) = parse_instant(&from, None).map_err(bad_request)?;
            let (_, t1) = parse_instant(&to, Some(year)).map_err(bad_request)?;
            let work: Work = Box::new(move |topo, out| {
                let job = SimulateJob {
                    topology: topo.expect("simulate runs on a topology"),
                    weather,
                    inputs,
                    fidelity,
                    from: t0,
                    to: t1,
                    year,
                    config,
                };
                simulate_to_dir(&job, out)
            });
            Ok((JobKind::Simulate, Some(topology), work))
        }
        JobRequest::Calibrate {
            topology,
            meas_csv,
            meas,
            config_toml,
            run,
        } => {
            let text = text_or_file(meas_csv, meas, "meas")?;
            let meas = MeasurementSet::read(text.as_bytes(), &run.site).map_err(bad_request)?;
            let config = match config_toml {
                Some(t) => CalibrationConfig::from_toml(&t).map_err(bad_request)?,
                None => CalibrationConfig::default(),
            };
            let work: Work = Box::new(move |topo, out| {
                let job = CalibrateJob {
                    topology: topo.expect("calibration runs on a topology"),
                    meas,
                    config,
                    run,
                    resume: false,
                };
                calibrate_to_dir(&job, out)
            });
            Ok((JobKind::Calibrate, Some(topology), work))
        }
        JobRequest::Benchmark { scenario } => {
            if !scenario.exists() {
                return Err(bad_request(format!("scenario {} not found", scenario.display())));
            }
            let work: Work = Box::new(move |_, out| bench_to_dir(&scenario, None, out));
            Ok((JobKind::Benchmark, None, work))
        }
    }
}

fn check(topo: &BuildingTopology) -> Result<(), ValidationReport> {
    let report = validate_topology(topo);
    if report.is_valid() {
        Ok(())
    } else {
        Err(report)
    }
}

async fn post_job(State(s): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<JobRecord>), ApiError> {
    let req: JobRequest = parse_json(&body)?;
    let (kind, topology, work) = prepare(req)?;
    let (rec, topo) = match topology {
        None => (s.store.create(kind, false).map_err(internal)?, None),
        Some(Some(t)) => {
            check(&t).map_err(invalid)?;
            (s.store.create(kind, false).map_err(internal)?, Some(t))
        }
        Some(None) => match s.store.create_on_stored(kind, check).map_err(internal)? {
            None => return Err(bad_request("no topology in the request and none stored")),
            Some(Err(report)) => return Err(invalid(report)),
            Some(Ok((rec, t))) => (rec, Some(t)),
        },
    };
    let id = rec.job_id.clone();
    let state = s.clone();
    tokio::spawn(async move {
        let Ok(_permit) = state.slots.clone().acquire_owned().await else {
            return;
        };
        let _ = state.store.transition(&id, JobStatus::Running, None);
        let dir = state.store.job_dir(&id);
        let outcome = tokio::task::spawn_blocking(move || work(topo, &dir)).await;
        let _ = match outcome {
            Ok(Ok(_)) => state.store.transition(&id, JobStatus::Done, None),
            Ok(Err(e)) => state.store.transition(&id, JobStatus::Failed, Some(format!("{e:#}"))),
            Err(e) => state.store.transition(&id, JobStatus::Failed, Some(format!("job panicked: {e}"))),
        };
    });
    Ok((StatusCode::ACCEPTED, Json(rec)))
}

async fn list_jobs(State(s): State<AppState>) -> Json<Vec<JobRecord>> {
    Json(s.store.list())
}

fn find(s: &AppState, id: &str) -> Result<JobRecord, ApiError> {
    s.store
        .get(id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, json!({ "error": format!("unknown job {id}") })))
}

async fn get_job(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<JobRecord>, ApiError> {
    find(&s, &id).map(Json)
}

/// Every `stride`-th sample so that no channel exceeds `max` points.
pub fn decimate(table: &Table, max: usize) -> Value {
    let n = table.grid.len;
    let stride = n.div_ceil(max.max(1)).max(1);
    let pick = |v: &[f64]| -> Vec<f64> { v.iter().step_by(stride).copied().collect() };
    let times: Vec<f64> = (0..n).step_by(stride).map(|i| table.grid.time(i)).collect();
    let series: serde_json::Map<String, Value> =
        table.columns.iter().map(|(k, v)| (k.clone(), json!(pick(v)))).collect();
    json!({ "time_s": times, "series": series, "stride": stride, "samples": n })
}

fn read_series(path: &Path) -> Result<Value, ApiError> {
    let table = Table::from_path(path).map_err(internal)?;
    Ok(decimate(&table, MAX_POINTS))
}

fn read_json(path: &Path) -> Result<Value, ApiError> {
    let text = std::fs::read_to_string(path).map_err(internal)?;
    serde_json::from_str(&text).map_err(internal)
}

async fn get_result(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let rec = find(&s, &id)?;
    match rec.status {
        JobStatus::Done => {}
        JobStatus::Failed => {
            return Err(ApiError(
                StatusCode::CONFLICT,
                json!({ "error": "job failed", "detail": rec.error }),
            ))
        }
        _ => return Err(ApiError(StatusCode::CONFLICT, json!({ "error": "job not finished", "status": rec.status }))),
    }
    let dir = s.store.job_dir(&id);
    let body = match rec.kind {
        JobKind::Simulate => read_series(&dir.join(RESULT_CSV))?,
        JobKind::Calibrate => json!({
            "report": read_json(&dir.join(REPORT_JSON))?,
            "after": read_series(&dir.join(AFTER_CSV))?,
        }),
        JobKind::Benchmark => read_json(&dir.join(REPORT_JSON))?,
    };
    Ok(Json(body))
}
