use std::path::{Path, PathBuf};

use anyhow::Context;
use forgeline_core::annotation::{validate_manifest, DatasetManifest, ImageRef, ValidationReport};
use forgeline_core::backends::config::BackendConfig;
use forgeline_core::backends::BackendSuite;
use serde::Serialize;

use crate::exit;
use crate::options::{load_config, Options};
use crate::GlobalArgs;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Serialize)]
struct ConfigEcho<'a> {
    schema_version: &'static str,
    tool: &'static str,
    version: &'static str,
    command: Vec<String>,
    subcommand: &'a str,
    seed: Option<u64>,
    manifest: Option<String>,
    backends_path: Option<String>,
    backends: &'a BackendConfig,
    options: &'a Options,
}

pub struct Ctx {
    pub global: GlobalArgs,
    subcommand: String,
    file_options: Options,
    backends: BackendConfig,
}

impl Ctx {
    pub fn new(global: GlobalArgs, subcommand: &str) -> anyhow::Result<Self> {
        let (file_options, echo_backends) = match &global.config {
            Some(path) => {
                let loaded = load_config(path)?;
                (loaded.options, loaded.backends)
            }
            None => (Options::default(), None),
        };
        let mut backends = match (&global.backends, echo_backends) {
            (Some(path), _) => BackendConfig::load(path).map_err(|e| exit::usage(e.to_string()))?,
            (None, Some(b)) => b,
            (None, None) => BackendConfig::default(),
        };
        backends.apply_env();
        Ok(Self {
            global,
            subcommand: subcommand.to_owned(),
            file_options,
            backends,
        })
    }

    /// Defaults, then the config file, then global flags, then `flags`.
    pub fn options(&self, flags: Options) -> Options {
        let global = Options {
            seed: self.global.seed,
            concurrency: self.global.concurrency,
            ..Default::default()
        };
        Options::defaults()
            .overlay(self.file_options.clone())
            .overlay(global)
            .overlay(flags)
    }

    pub fn backend_config(&self) -> &BackendConfig {
        &self.backends
    }

    pub fn suite(&self, manifest: &DatasetManifest) -> anyhow::Result<BackendSuite> {
        self.backends.build(manifest).map_err(exit::backend)
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        let out = self.global.out.as_path();
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }

    pub fn out_path(&self, rel: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_dir()?.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> anyhow::Result<PathBuf> {
        let path = self.out_path(rel)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_path(rel)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Writes `config.json` describing this run.
    pub fn echo(&self, options: &Options, manifest: Option<&Path>) -> anyhow::Result<()> {
        let echo = ConfigEcho {
            schema_version: SCHEMA_VERSION,
            tool: "forgeline",
            version: env!("CARGO_PKG_VERSION"),
            command: std::env::args().collect(),
            subcommand: &self.subcommand,
            seed: options.seed,
            manifest: manifest.map(|p| p.display().to_string()),
            backends_path: self.global.backends.as_ref().map(|p| p.display().to_string()),
            backends: &self.backends,
            options,
        };
        self.write_json("config.json", &echo)?;
        Ok(())
    }
}

/// Prints violations and fails with the validation exit code.
pub fn ensure_valid(path: &Path, report: &ValidationReport) -> anyhow::Result<()> {
    if report.is_valid() {
        return Ok(());
    }
    for v in &report.violations {
        eprintln!(
            "  {}: {}{} {}",
            v.violation,
            v.id.as_deref().map(|i| format!("{i} ")).unwrap_or_default(),
            v.field,
            v.detail
        );
    }
    Err(exit::validation(format!(
        "{}: {} violation(s)",
        path.display(),
        report.violations.len()
    )))
}

/// Loads a manifest and refuses it unless every invariant holds.
pub fn load_valid_manifest(path: &Path) -> anyhow::Result<DatasetManifest> {
    let m = DatasetManifest::load(path).map_err(exit::validation)?;
    ensure_valid(path, &validate_manifest(&m))?;
    Ok(m)
}

/// Rewrites relative image paths so the manifest can be saved elsewhere.
pub fn absolutize(manifest: &DatasetManifest) -> DatasetManifest {
    let base = std::fs::canonicalize(&manifest.base_dir).unwrap_or_else(|_| manifest.base_dir.clone());
    let fix = |r: &ImageRef| match r {
        ImageRef::Path(p) if Path::new(p).is_relative() => ImageRef::Path(base.join(p).display().to_string()),
        other => other.clone(),
    };
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.image = fix(&e.image);
        e.reference = e.reference.as_ref().map(fix);
    }
    out
}
