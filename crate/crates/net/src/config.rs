//! Coordinator configuration: a TOML file with environment overrides.
//!
//! ```toml
//! listen = "127.0.0.1:7700"   # client and operator connections
//! http = "127.0.0.1:7780"     # HTTP API; omit to disable
//! heartbeat_ms = 1000
//! session_timeout_secs = 120
//! cache_dir = ".fedvis-cache"
//! static_dir = "webui/dist"
//! manifest = "data/manifest.json"   # shards for `fedvis up` to launch
//! ```
//!
//! Each key can be overridden by `FEDVIS_<KEY>` in upper case.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::coordinator::CoordinatorOptions;
use crate::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: String,
    pub http: Option<String>,
    pub heartbeat_ms: u64,
    pub session_timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7700".into(),
            http: Some("127.0.0.1:7780".into()),
            heartbeat_ms: 1000,
            session_timeout_secs: 120,
            cache_dir: None,
            static_dir: None,
            manifest: None,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, NetError> {
        let c: Config = toml::from_str(text).map_err(|e| NetError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.cache_dir, &mut c.static_dir, &mut c.manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(
        &mut self,
        vars: I,
    ) -> Result<(), NetError> {
        let num = |k: &str, v: &str| {
            v.parse::<u64>()
                .map_err(|_| NetError::Config(format!("{k}={v:?} is not a number")))
        };
        let opt = |v: String| if v.is_empty() { None } else { Some(v) };
        for (k, v) in vars {
            match k.as_str() {
                "FEDVIS_LISTEN" => self.listen = v,
                "FEDVIS_HTTP" => self.http = opt(v),
                "FEDVIS_HEARTBEAT_MS" => self.heartbeat_ms = num(&k, &v)?,
                "FEDVIS_SESSION_TIMEOUT_SECS" => self.session_timeout_secs = num(&k, &v)?,
                "FEDVIS_CACHE_DIR" => self.cache_dir = opt(v).map(PathBuf::from),
                "FEDVIS_STATIC_DIR" => self.static_dir = opt(v).map(PathBuf::from),
                "FEDVIS_MANIFEST" => self.manifest = opt(v).map(PathBuf::from),
                _ => {}
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.heartbeat_ms == 0 {
            return Err(NetError::Config("heartbeat_ms must be positive".into()));
        }
        if self.session_timeout_secs == 0 {
            return Err(NetError::Config(
                "session_timeout_secs must be positive".into(),
            ));
        }
        if self.listen.is_empty() {
            return Err(NetError::Config("listen address is empty".into()));
        }
        Ok(())
    }

    pub fn coordinator_options(&self) -> CoordinatorOptions {
        CoordinatorOptions {
            heartbeat_ms: self.heartbeat_ms,
            session_timeout: Duration::from_secs(self.session_timeout_secs),
            cache_dir: self.cache_dir.clone(),
            ..CoordinatorOptions::default()
        }
    }
}
