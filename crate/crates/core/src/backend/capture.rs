use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

/// One line of a capture file. Credentials are never part of a request, so
/// nothing secret can end up here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wraps another backend and appends every exchange to a JSONL file.
pub struct CapturingBackend {
    inner: Arc<dyn ChatBackend>,
    sink: Mutex<File>,
}

impl CapturingBackend {
    pub fn create(inner: Arc<dyn ChatBackend>, path: &Path) -> Result<Self, BackendError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            sink: Mutex::new(file),
        })
    }

    fn record(&self, record: &CaptureRecord) {
        let mut line = serde_json::to_string(record).expect("capture record serialises");
        line.push('\n');
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = sink.write_all(line.as_bytes()).and_then(|_| sink.flush()) {
            tracing::warn!(error = %e, "failed to write capture record");
        }
    }
}

impl ChatBackend for CapturingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let result = self.inner.complete(request);
        self.record(&CaptureRecord {
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        result
    }
}
