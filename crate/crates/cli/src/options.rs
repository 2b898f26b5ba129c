use std::path::Path;

use anyhow::Context;
use forgeline_core::backends::config::BackendConfig;
use forgeline_core::refine::InpaintMode;
use serde::{Deserialize, Serialize};

use crate::exit;

/// Every tunable a run can take. A JSON config file and command-line flags
/// are both read into this shape and layered over [`Options::defaults`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub iters: Option<usize>,
    pub mode: Option<InpaintMode>,
    /// `standard` or a comma-separated list such as `jpeg:50,noise:0.1,blur:5`.
    pub grid: Option<String>,
    pub threshold: Option<f64>,
    pub early_stop: Option<bool>,
    pub score: Option<bool>,
    pub persist_regions: Option<bool>,
    pub prompt: Option<String>,
    pub css: Option<bool>,
    pub k: Option<usize>,
    pub n_per_cluster: Option<usize>,
    pub kmeans_iters: Option<usize>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        Options { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Options {
    pub fn defaults() -> Self {
        Self {
            seed: Some(0),
            concurrency: Some(4),
            iters: None,
            mode: Some(InpaintMode::default()),
            grid: Some("standard".into()),
            threshold: Some(forgeline_core::backends::DECISION_THRESHOLD),
            early_stop: Some(true),
            score: Some(true),
            persist_regions: Some(false),
            prompt: None,
            css: Some(true),
            k: Some(8),
            n_per_cluster: Some(10),
            kmeans_iters: Some(100),
        }
    }

    /// Fields set in `top` win.
    pub fn overlay(self, top: Options) -> Options {
        let base = self;
        overlay_fields!(base, top; seed, concurrency, iters, mode, grid, threshold, early_stop, score,
            persist_regions, prompt, css, k, n_per_cluster, kmeans_iters)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency.unwrap_or(4).max(1)
    }
}

/// What a `--config` file may contain.
pub struct LoadedConfig {
    pub options: Options,
    /// Present when the file is a config echo.
    pub backends: Option<BackendConfig>,
}

#[derive(Deserialize)]
struct EchoView {
    options: Options,
    backends: BackendConfig,
}

pub fn load_config(path: &Path) -> anyhow::Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| exit::usage(format!("{}: {e}", path.display())))?;
    if value.get("schema_version").is_some() && value.get("options").is_some() {
        let echo: EchoView = serde_json::from_value(value)
            .map_err(|e| exit::usage(format!("{}: not a usable config echo: {e}", path.display())))?;
        return Ok(LoadedConfig {
            options: echo.options,
            backends: Some(echo.backends),
        });
    }
    let options = serde_json::from_value(value).map_err(|e| exit::usage(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig { options, backends: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: Options = serde_json::from_str(r#"{"seed": 5, "iters": 7, "mode": "sequential"}"#).unwrap();
        let flags = Options {
            seed: Some(9),
            ..Default::default()
        };
        let o = Options::defaults().overlay(file).overlay(flags);
        assert_eq!(o.seed, Some(9));
        assert_eq!(o.iters, Some(7));
        assert_eq!(o.mode, Some(InpaintMode::Sequential));
        assert_eq!(o.k, Some(8));
    }

    #[test]
    fn unknown_option_rejected() {
        assert!(serde_json::from_str::<Options>(r#"{"sead": 1}"#).is_err());
    }
}
