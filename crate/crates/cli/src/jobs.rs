//! On-disk job store: one directory per job holding `job.json` and the
//! job's artifacts, plus the editor's current topology document.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hydrozone::topology::BuildingTopology;

pub const DATA_DIR_ENV: &str = "JANUS_DATA_DIR";
const JOB_FILE: &str = "job.json";
const TOPOLOGY_FILE: &str = "topology.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Simulate,
    Calibrate,
    Benchmark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_active(self) -> bool {
        matches!(self, JobStatus::Queued | JobStatus::Running)
    }

    fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Queued, JobStatus::Failed)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// File names inside the job directory.
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The job runs on the stored topology document.
    pub uses_stored_topology: bool,
}

pub struct JobStore {
    root: PathBuf,
    jobs: Mutex<BTreeMap<String, JobRecord>>,
    topology: Mutex<()>,
}

/// Data directory from the environment, or `./janus-data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("janus-data"), PathBuf::from)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl JobStore {
    /// Opens or creates a store. Jobs left queued or running by a previous
    /// process are marked failed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("jobs")).with_context(|| format!("creating {}", root.display()))?;
        let mut jobs = BTreeMap::new();
        for entry in fs::read_dir(root.join("jobs"))? {
            let path = entry?.path().join(JOB_FILE);
            let Ok(text) = fs::read_to_string(&path) else { continue };
            let mut rec: JobRecord =
                serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
            if rec.status.is_active() {
                rec.status = JobStatus::Failed;
                rec.error = Some("interrupted by service restart".into());
                write_atomic(&path, &serde_json::to_vec_pretty(&rec)?)?;
            }
            jobs.insert(rec.job_id.clone(), rec);
        }
        Ok(Self {
            root,
            jobs: Mutex::new(jobs),
            topology: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(id)
    }

    fn persist(&self, rec: &JobRecord) -> Result<()> {
        let dir = self.job_dir(&rec.job_id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(JOB_FILE), &serde_json::to_vec_pretty(rec)?)?;
        Ok(())
    }

    pub fn create(&self, kind: JobKind, uses_stored_topology: bool) -> Result<JobRecord> {
        let rec = JobRecord {
            job_id: uuid::Uuid::new_v4().simple().to_string(),
            kind,
            status: JobStatus::Queued,
            artifacts: Vec::new(),
            error: None,
            uses_stored_topology,
        };
        self.persist(&rec)?;
        self.jobs.lock().expect("job map").insert(rec.job_id.clone(), rec.clone());
        Ok(rec)
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.jobs.lock().expect("job map").get(id).cloned()
    }

    pub fn list(&self) -> Vec<JobRecord> {
        self.jobs.lock().expect("job map").values().cloned().collect()
    }

    /// Moves a job forward; backward transitions are ignored.
    pub fn transition(&self, id: &str, status: JobStatus, error: Option<String>) -> Result<()> {
        let rec = {
            let mut jobs = self.jobs.lock().expect("job map");
            let Some(rec) = jobs.get_mut(id) else {
                anyhow::bail!("unknown job {id}");
            };
            if !rec.status.can_become(status) {
                return Ok(());
            }
            rec.status = status;
            rec.error = error;
            if status == JobStatus::Done {
                let mut names: Vec<String> = fs::read_dir(self.job_dir(id))?
                    .filter_map(|e| e.ok()?.file_name().into_string().ok())
                    .filter(|n| n != JOB_FILE)
                    .collect();
                names.sort();
                rec.artifacts = names;
            }
            rec.clone()
        };
        self.persist(&rec)
    }

    pub fn active_on_stored_topology(&self) -> bool {
        self.jobs
            .lock()
            .expect("job map")
            .values()
            .any(|j| j.uses_stored_topology && j.status.is_active())
    }

    pub fn read_topology(&self) -> Result<Option<BuildingTopology>> {
        let _guard = self.topology.lock().expect("topology lock");
        let path = self.root.join(TOPOLOGY_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
    }

    /// Replaces the stored document unless an active job uses it. Returns
    /// false on conflict.
    pub fn replace_topology(&self, topo: &BuildingTopology) -> Result<bool> {
        let _guard = self.topology.lock().expect("topology lock");
        if self.active_on_stored_topology() {
            return Ok(false);
        }
        write_atomic(&self.root.join(TOPOLOGY_FILE), &serde_json::to_vec_pretty(topo)?)?;
        Ok(true)
    }

    /// Creates a job on a copy of the stored document if `accept` passes
    /// it. `None` when no document is stored.
    pub fn create_on_stored<E>(
        &self,
        kind: JobKind,
        accept: impl FnOnce(&BuildingTopology) -> Result<(), E>,
    ) -> Result<Option<Result<(JobRecord, BuildingTopology), E>>> {
        let _guard = self.topology.lock().expect("topology lock");
        let path = self.root.join(TOPOLOGY_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let topo: BuildingTopology = serde_json::from_str(&fs::read_to_string(path)?)?;
        if let Err(e) = accept(&topo) {
            return Ok(Some(Err(e)));
        }
        Ok(Some(Ok((self.create(kind, true)?, topo))))
    }
}
