//! In-process queue for long-running requests (sweeps, Themis runs).
//!
//! Job ids are the ids of the artifacts the jobs produce, so resubmitting an
//! identical request joins the existing job, and a finished job can always
//! be reconstructed from the store after a restart.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{watch, Semaphore};

use crate::error::{ApiError, ErrorBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub kind: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// What a submitting request gets back. Contains no status, so replaying a
/// request always yields the same body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobTicket {
    pub job_id: String,
    pub kind: String,
    pub status_url: String,
}

#[derive(Debug, Clone)]
pub struct JobQueue {
    jobs: Arc<Mutex<HashMap<String, watch::Sender<JobView>>>>,
    permits: Arc<Semaphore>,
}

impl JobQueue {
    /// A queue running at most `workers` jobs at a time.
    pub fn new(workers: usize) -> Self {
        Self {
            jobs: Arc::default(),
            permits: Arc::new(Semaphore::new(workers.max(1))),
        }
    }

    /// Queues `work` under `job_id` unless a job with that id is queued,
    /// running or done. Failed jobs are retried.
    pub fn submit<F>(&self, job_id: &str, kind: &str, work: F) -> JobTicket
    where
        F: FnOnce() -> Result<Value, ApiError> + Send + 'static,
    {
        let ticket = JobTicket {
            job_id: job_id.to_string(),
            kind: kind.to_string(),
            status_url: format!("/jobs/{job_id}"),
        };
        let mut jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(tx) = jobs.get(job_id) {
            if tx.borrow().status != JobStatus::Failed {
                return ticket;
            }
        }
        let (tx, _) = watch::channel(JobView {
            job_id: job_id.to_string(),
            kind: kind.to_string(),
            status: JobStatus::Queued,
            result: None,
            error: None,
        });
        jobs.insert(job_id.to_string(), tx.clone());
        drop(jobs);

        let permits = Arc::clone(&self.permits);
        tokio::spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore is never closed");
            tx.send_modify(|v| v.status = JobStatus::Running);
            let outcome = tokio::task::spawn_blocking(work)
                .await
                .unwrap_or_else(|e| Err(ApiError::Internal(format!("job panicked: {e}"))));
            tx.send_modify(|v| match outcome {
                Ok(result) => {
                    v.status = JobStatus::Done;
                    v.result = Some(result);
                }
                Err(e) => {
                    tracing::warn!(job = %v.job_id, error = %e, "job failed");
                    v.status = JobStatus::Failed;
                    v.error = Some(e.body());
                }
            });
        });
        ticket
    }

    /// Current view of a job known to this process.
    pub fn get(&self, job_id: &str) -> Option<JobView> {
        let jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
        jobs.get(job_id).map(|tx| tx.borrow().clone())
    }

    /// Waits until the job finishes; `None` for unknown ids.
    pub async fn wait(&self, job_id: &str) -> Option<JobView> {
        let mut rx = {
            let jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
            jobs.get(job_id)?.subscribe()
        };
        let view = rx
            .wait_for(|v| v.status.is_terminal())
            .await
            .map(|v| v.clone())
            .ok()?;
        Some(view)
    }
}
