use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::session::EngineConfig;

/// What to do with a second job for a session that is already busy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusyPolicy {
    /// Answer 409.
    #[default]
    Reject,
    /// Accept the job and run it after the current one.
    Queue,
}

/// Server configuration (TOML). Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Backend configuration file.
    pub backend: PathBuf,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Rubric used when a request does not carry one.
    #[serde(default)]
    pub rubric: Option<PathBuf>,
    /// Jobs running at once.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub busy: BusyPolicy,
    #[serde(default)]
    pub engine: EngineConfig,
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_parallelism() -> usize {
    4
}

impl ServiceConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, String> {
        let mut c: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut c.backend);
        resolve(&mut c.data_dir);
        if let Some(p) = &mut c.templates {
            resolve(p);
        }
        if let Some(p) = &mut c.rubric {
            resolve(p);
        }
        if c.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        c.listen
            .parse::<std::net::SocketAddr>()
            .map_err(|e| format!("listen `{}`: {e}", c.listen))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| format!("{}: {e}", path.display()))
    }
}
