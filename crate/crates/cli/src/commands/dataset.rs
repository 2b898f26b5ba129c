use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use forgeline_core::annotation::{check_count, dataset_stats, validate_manifest, DatasetManifest, DatasetStats, ValidationReport};
use forgeline_core::fixtures;
use serde::Serialize;

use crate::context::{ensure_valid, Ctx, SCHEMA_VERSION};
use crate::exit;
use crate::options::Options;

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Check every manifest invariant; exits 1 when any is violated.
    Validate(ValidateArgs),
    /// Image and region counts by content and artifact type.
    Stats(ManifestArg),
    /// Write a synthetic paired dataset (artifact image plus clean reference).
    Fixtures(FixturesArgs),
}

impl DatasetCmd {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Validate(_) => "validate",
            Self::Stats(_) => "stats",
            Self::Fixtures(_) => "fixtures",
        }
    }
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also require exactly this many entries.
    #[arg(long)]
    pub expected_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Also write one corrupted copy of the manifest per invariant.
    #[arg(long)]
    pub corruptions: bool,
}

#[derive(Serialize)]
struct ValidationOut<'a> {
    schema_version: &'static str,
    kind: &'static str,
    manifest: String,
    valid: bool,
    #[serde(flatten)]
    report: &'a ValidationReport,
}

#[derive(Serialize)]
struct StatsOut<'a> {
    schema_version: &'static str,
    kind: &'static str,
    manifest: String,
    #[serde(flatten)]
    stats: &'a DatasetStats,
}

pub fn run(ctx: &Ctx, cmd: DatasetCmd) -> anyhow::Result<()> {
    match cmd {
        DatasetCmd::Validate(a) => validate(ctx, a),
        DatasetCmd::Stats(a) => stats(ctx, a),
        DatasetCmd::Fixtures(a) => write_fixtures(ctx, a),
    }
}

fn validate(ctx: &Ctx, a: ValidateArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options::default());
    ctx.echo(&options, Some(&a.manifest))?;
    let m = DatasetManifest::load(&a.manifest).map_err(exit::validation)?;
    let mut report = validate_manifest(&m);
    if let Some(n) = a.expected_count {
        check_count(&mut report, n);
    }
    let out = ValidationOut {
        schema_version: SCHEMA_VERSION,
        kind: "validation",
        manifest: a.manifest.display().to_string(),
        valid: report.is_valid(),
        report: &report,
    };
    let path = ctx.write_json("validation.json", &out)?;
    for w in &report.warnings {
        log::warn!("{}: {} {}", w.id, w.field, w.detail);
    }
    ensure_valid(&a.manifest, &report)?;
    println!(
        "valid: {} entries, {} warning(s); report at {}",
        report.entries,
        report.warnings.len(),
        path.display()
    );
    Ok(())
}

fn stats(ctx: &Ctx, a: ManifestArg) -> anyhow::Result<()> {
    let options = ctx.options(Options::default());
    ctx.echo(&options, Some(&a.manifest))?;
    let m = DatasetManifest::load(&a.manifest).map_err(exit::validation)?;
    let report = validate_manifest(&m);
    if !report.is_valid() {
        log::warn!("{} violation(s); counting parsed entries only", report.violations.len());
    }
    let s = dataset_stats(&m);
    ctx.write_json(
        "stats.json",
        &StatsOut {
            schema_version: SCHEMA_VERSION,
            kind: "stats",
            manifest: a.manifest.display().to_string(),
            stats: &s,
        },
    )?;
    println!("{:<12} {:>8} {:>8}", "content", "images", "fake");
    for (k, v) in &s.images_by_content_type {
        println!("{k:<12} {v:>8} {:>8}", s.fake_images_by_content_type[k]);
    }
    println!("{:<12} {:>8} {:>8}", "total", s.total_images, s.fake_images);
    println!();
    println!("{:<12} {:>8}", "artifact", "regions");
    for (k, v) in &s.regions_by_artifact_type {
        println!("{k:<12} {v:>8}");
    }
    println!("{:<12} {:>8}", "total", s.total_regions);
    Ok(())
}

fn write_fixtures(ctx: &Ctx, a: FixturesArgs) -> anyhow::Result<()> {
    if a.n == 0 {
        return Err(exit::usage("--n must be at least 1"));
    }
    if a.corruptions && a.n < 5 {
        return Err(exit::usage("--corruptions needs --n 5 or more (one real entry)"));
    }
    let options = ctx.options(Options::default());
    ctx.echo(&options, None)?;
    let dir = ctx.out_dir()?;
    let m = fixtures::write_dataset(dir, a.n, options.seed())?;
    println!("wrote {} entries to {}", m.entries.len(), dir.join("manifest.jsonl").display());
    if a.corruptions {
        let mut expected = BTreeMap::new();
        for (name, text, violation) in fixtures::corruptions(&m) {
            let file = format!("corrupt_{name}.jsonl");
            ctx.write_text(&file, &text)?;
            expected.insert(file, violation);
        }
        ctx.write_json("corruptions.json", &expected)?;
        println!("wrote {} corrupted manifests (see corruptions.json)", expected.len());
    }
    Ok(())
}
