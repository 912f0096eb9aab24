use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Evaluate,
    Challenge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Where the finished result can be read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// In-memory job table. Terminal jobs never change again.
#[derive(Default)]
pub(super) struct JobRegistry {
    jobs: Mutex<HashMap<String, JobHandle>>,
}

impl JobRegistry {
    pub fn create(&self, session_id: &str, kind: JobKind) -> String {
        let job_id = uuid::Uuid::new_v4().simple().to_string();
        let handle = JobHandle {
            job_id: job_id.clone(),
            session_id: session_id.to_string(),
            kind,
            status: JobStatus::Pending,
            result_ref: None,
            error: None,
        };
        self.table().insert(job_id.clone(), handle);
        job_id
    }

    fn table(&self) -> std::sync::MutexGuard<'_, HashMap<String, JobHandle>> {
        self.jobs.lock().expect("job table poisoned")
    }

    pub fn get(&self, job_id: &str) -> Option<JobHandle> {
        self.table().get(job_id).cloned()
    }

    pub fn start(&self, job_id: &str) {
        if let Some(j) = self.table().get_mut(job_id) {
            if j.status == JobStatus::Pending {
                j.status = JobStatus::Running;
            }
        }
    }

    pub fn finish(&self, job_id: &str, result: Result<String, String>) {
        if let Some(j) = self.table().get_mut(job_id) {
            if j.status.is_terminal() {
                return;
            }
            match result {
                Ok(r) => {
                    j.status = JobStatus::Done;
                    j.result_ref = Some(r);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            }
        }
    }

    pub fn fail_unfinished(&self, reason: &str) -> usize {
        let mut n = 0;
        for j in self
            .table()
            .values_mut()
            .filter(|j| !j.status.is_terminal())
        {
            j.status = JobStatus::Failed;
            j.error = Some(reason.to_string());
            n += 1;
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_states_are_final() {
        let r = JobRegistry::default();
        let id = r.create("s", JobKind::Evaluate);
        assert_eq!(r.get(&id).unwrap().status, JobStatus::Pending);
        r.start(&id);
        r.finish(&id, Err("boom".into()));
        r.finish(&id, Ok("/x".into()));
        r.start(&id);
        let j = r.get(&id).unwrap();
        assert_eq!(j.status, JobStatus::Failed);
        assert_eq!(j.result_ref, None);
        assert_eq!(r.fail_unfinished("stop"), 0);

        let other = r.create("s", JobKind::Challenge);
        assert_eq!(r.fail_unfinished("stop"), 1);
        assert_eq!(r.get(&other).unwrap().error.as_deref(), Some("stop"));
    }
}
