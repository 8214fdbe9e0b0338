use std::fs;
use std::path::{Path, PathBuf};

use patternscope::arch::GridLists;
use patternscope::corr::CurveOptions;
use patternscope::pipeline::MANIFEST_FILE;
use patternscope::stats::CompareOptions;
use patternscope_tagserve::ServeConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Number of seeds per architecture in the reference dataset.
pub const REFERENCE_SEEDS: u64 = 40;

/// Run configuration. Every field has a default, so a config file only
/// needs the parts it changes; command-line flags override both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub grid: GridLists,
    pub seeds: Vec<u64>,
    pub render: Render,
    pub correlation: CurveOptions,
    pub stats: CompareOptions,
    pub serve: Serve,
    /// Worker threads for rendering and correlation; 0 uses every core.
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            grid: GridLists::reference(),
            seeds: (0..REFERENCE_SEEDS).collect(),
            render: Render::default(),
            correlation: CurveOptions::default(),
            stats: CompareOptions::default(),
            serve: Serve::default(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/manifest.jsonl`.
    pub manifest: Option<PathBuf>,
    /// Source tree of natural images for `ingest`.
    pub natural_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            manifest: None,
            natural_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Render {
    pub width: usize,
    pub height: usize,
}

impl Default for Render {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Serve {
    pub bind: String,
    pub port: u16,
    /// Event log directory; defaults to `<data_dir>/tags`.
    pub tags_dir: Option<PathBuf>,
    pub time_limit_secs: u64,
    pub static_dir: Option<PathBuf>,
    pub snapshot_every: u64,
}

impl Default for Serve {
    fn default() -> Self {
        let d = ServeConfig::default();
        Self {
            bind: d.bind,
            port: d.port,
            tags_dir: None,
            time_limit_secs: d.time_limit_secs,
            static_dir: d.static_dir,
            snapshot_every: d.snapshot_every,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.paths.data_dir.join(MANIFEST_FILE))
    }

    /// Directory that relative record paths resolve against.
    pub fn base_dir(&self) -> PathBuf {
        self.manifest_path()
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    pub fn serve_config(&self) -> ServeConfig {
        ServeConfig {
            bind: self.serve.bind.clone(),
            port: self.serve.port,
            manifest: self.manifest_path(),
            data_dir: self
                .serve
                .tags_dir
                .clone()
                .unwrap_or_else(|| self.paths.data_dir.join("tags")),
            time_limit_secs: self.serve.time_limit_secs,
            static_dir: self.serve.static_dir.clone(),
            snapshot_every: self.serve.snapshot_every,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.render.width < 2 || self.render.height < 2 {
            return fail(format!(
                "render size {}x{} is below 2x2",
                self.render.width, self.render.height
            ));
        }
        if self.correlation.bins == 0 {
            return fail("correlation.bins must be positive".into());
        }
        if !(self.stats.alpha_base > 0.0 && self.stats.alpha_base < 1.0) {
            return fail(format!("stats.alpha_base {} is outside (0, 1)", self.stats.alpha_base));
        }
        if self.stats.scope_bins == 0 {
            return fail("stats.scope_bins must be positive".into());
        }
        let w = &self.correlation.luma;
        if ![w.r, w.g, w.b].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return fail("luma weights must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let cfg: Config = serde_json::from_str(
            r#"{"paths": {"data_dir": "/tmp/x"}, "grid": {"L": [3]}, "stats": {"scope_bins": 100}}"#,
        )
        .unwrap();
        assert_eq!(cfg.manifest_path(), PathBuf::from("/tmp/x/manifest.jsonl"));
        assert_eq!(cfg.grid.layers, vec![3]);
        assert_eq!(cfg.grid.neurons, vec![100, 250, 500]);
        assert_eq!(cfg.stats.scope_bins, 100);
        assert_eq!(cfg.stats.alpha_base, 0.05);
        assert_eq!(cfg.seeds.len(), 40);
        assert_eq!(cfg.serve_config().data_dir, PathBuf::from("/tmp/x/tags"));
        assert!(serde_json::from_str::<Config>(r#"{"colour": 1}"#).is_err());
    }

    #[test]
    fn round_trips() {
        let cfg = Config::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }
}
