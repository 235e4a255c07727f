// Copyright 2026 The Unimart Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! `key = value` gateway configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use unimart_core::etl::SplitConfig;
use unimart_core::parallel::available_parallelism;

pub const CONFIG_FILE: &str = "unimart.conf";
pub const REGISTRY_FILE: &str = "registry.csv";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid split sizes: {0}")]
    Split(String),
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayConfig {
    pub warehouse_root: PathBuf,
    pub s_min: u64,
    pub s_max: u64,
    pub s_b: u64,
    pub worker_pool_size: usize,
    pub cube_refresh_interval: Duration,
    pub listen_address: String,
    pub session_ttl: Duration,
    pub max_upload_bytes: u64,
    /// Defaults to `registry.csv` under the warehouse root.
    pub registry: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            warehouse_root: PathBuf::from("warehouse"),
            s_min: 1 << 20,
            s_max: 1 << 20,
            s_b: 1 << 20,
            worker_pool_size: available_parallelism(),
            cube_refresh_interval: Duration::from_secs(60),
            listen_address: "127.0.0.1:8080".into(),
            session_ttl: Duration::from_secs(3600),
            max_upload_bytes: 256 << 20,
            registry: None,
        }
    }
}

/// Parses `1048576`, `512KiB`, `64MiB` or `1GiB`.
pub fn parse_bytes(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (digits, scale) = [
        ("GiB", 1u64 << 30),
        ("MiB", 1 << 20),
        ("KiB", 1 << 10),
        ("B", 1),
    ]
    .iter()
    .find_map(|(suffix, scale)| s.strip_suffix(suffix).map(|d| (d.trim(), *scale)))
    .unwrap_or((s, 1));
    digits
        .parse::<u64>()
        .ok()
        .and_then(|n| n.checked_mul(scale))
        .ok_or_else(|| format!("`{s}` is not a byte size"))
}

/// Parses `60`, `60s`, `250ms` or `2m`.
pub fn parse_duration(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let bad = || format!("`{s}` is not a duration");
    if let Some(ms) = s.strip_suffix("ms") {
        return ms
            .trim()
            .parse()
            .map(Duration::from_millis)
            .map_err(|_| bad());
    }
    if let Some(m) = s.strip_suffix('m') {
        return m
            .trim()
            .parse::<u64>()
            .map(|m| Duration::from_secs(m * 60))
            .map_err(|_| bad());
    }
    s.strip_suffix('s')
        .unwrap_or(s)
        .trim()
        .parse()
        .map(Duration::from_secs)
        .map_err(|_| bad())
}

impl GatewayConfig {
    /// Parses configuration text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = GatewayConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| ConfigError::Syntax {
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "warehouse_root" => cfg.warehouse_root = PathBuf::from(value),
                "s_min" => cfg.s_min = parse_bytes(value).map_err(err)?,
                "s_max" => cfg.s_max = parse_bytes(value).map_err(err)?,
                "s_b" => cfg.s_b = parse_bytes(value).map_err(err)?,
                "worker_pool_size" => {
                    cfg.worker_pool_size = value
                        .parse()
                        .ok()
                        .filter(|n| *n > 0)
                        .ok_or_else(|| err(format!("`{value}` is not a positive integer")))?
                }
                "cube_refresh_interval" => {
                    cfg.cube_refresh_interval = parse_duration(value).map_err(err)?
                }
                "listen_address" => cfg.listen_address = value.to_string(),
                "session_ttl" => cfg.session_ttl = parse_duration(value).map_err(err)?,
                "max_upload_bytes" => cfg.max_upload_bytes = parse_bytes(value).map_err(err)?,
                "registry" => cfg.registry = Some(PathBuf::from(value)),
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.split_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn split_config(&self) -> Result<SplitConfig, ConfigError> {
        SplitConfig::new(self.s_min, self.s_max, self.s_b)
            .map_err(|e| ConfigError::Split(e.to_string()))
    }

    pub fn registry_path(&self) -> PathBuf {
        self.registry
            .clone()
            .unwrap_or_else(|| self.warehouse_root.join(REGISTRY_FILE))
    }

    /// Configuration text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# unimart gateway configuration\n\
             warehouse_root = {}\n\
             # split planning, in bytes\n\
             s_min = {}\n\
             s_max = {}\n\
             s_b = {}\n\
             worker_pool_size = {}\n\
             cube_refresh_interval = {}ms\n\
             listen_address = {}\n\
             session_ttl = {}ms\n\
             max_upload_bytes = {}\n",
            self.warehouse_root.display(),
            self.s_min,
            self.s_max,
            self.s_b,
            self.worker_pool_size,
            self.cube_refresh_interval.as_millis(),
            self.listen_address,
            self.session_ttl.as_millis(),
            self.max_upload_bytes,
        );
        if let Some(r) = &self.registry {
            out += &format!("registry = {}\n", r.display());
        }
        out
    }
}
