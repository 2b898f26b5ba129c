use std::path::PathBuf;

use clap::Args;
use forgeline_core::perturb::{robustness_report, PerturbSpec};

use crate::context::{load_valid_manifest, Ctx};
use crate::exit;
use crate::options::Options;

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `standard`, or a comma-separated list like `jpeg:50,noise:0.1@7,blur:5`.
    #[arg(long)]
    pub grid: Option<String>,
}

/// Parses a grid description. Noise cells without an explicit `@seed` take
/// the run seed.
pub fn parse_grid(text: &str, seed: u64) -> anyhow::Result<Vec<PerturbSpec>> {
    if text.trim() == "standard" {
        return Ok(PerturbSpec::standard_grid(seed));
    }
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let mut spec: PerturbSpec = s.parse().map_err(|e| exit::usage(format!("--grid: {e}")))?;
            if !s.contains('@') {
                spec.seed = seed;
            }
            Ok(spec)
        })
        .collect()
}

pub fn run(ctx: &Ctx, a: RobustnessArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options {
        grid: a.grid.clone(),
        ..Default::default()
    });
    let grid = parse_grid(options.grid.as_deref().unwrap_or("standard"), options.seed())?;
    ctx.echo(&options, Some(&a.manifest))?;
    let m = load_valid_manifest(&a.manifest)?;
    let suite = ctx.suite(&m)?;
    let analyzer = suite.analyzer().map_err(exit::backend)?;
    let report = robustness_report(&m, analyzer.as_ref(), &grid, options.concurrency());
    ctx.write_json("robustness_report.json", &report)?;
    let table = report.render_table();
    ctx.write_text("robustness_table.txt", &table)?;
    print!("{table}");
    let failed: Vec<_> = report.cells.iter().filter(|c| c.failed).collect();
    if failed.is_empty() {
        return Ok(());
    }
    for c in &failed {
        for e in c.errors.iter().take(3) {
            eprintln!("  {}: {e}", c.label);
        }
    }
    Err(exit::backend(format!("{} cell(s) failed", failed.len())))
}
