use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use forgeline_core::annotation::{AnnotatedImage, DatasetManifest};
use forgeline_core::backends::BackendSuite;
use forgeline_core::eval::{growth_rate, GrowthReport};
use forgeline_core::parallel::bounded_map;
use forgeline_core::refine::{run_inpainting, run_regeneration, InpaintConfig, InpaintMode, RegenConfig, RunStatus};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::commands::eval::read_jsonl;
use crate::context::{load_valid_manifest, Ctx, SCHEMA_VERSION};
use crate::exit;
use crate::options::Options;

#[derive(Debug, Subcommand)]
pub enum RefineCmd {
    /// Analyze, collect explanations, revise the prompt, regenerate.
    Regen(RegenArgs),
    /// Analyze, then inpaint every reported region.
    Inpaint(InpaintArgs),
}

impl RefineCmd {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Regen(_) => "regen",
            Self::Inpaint(_) => "inpaint",
        }
    }
}

#[derive(Debug, Args)]
pub struct Selection {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only these entries.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Do not ask the scorer after each iteration.
    #[arg(long)]
    pub no_score: bool,
}

#[derive(Debug, Args)]
pub struct RegenArgs {
    #[command(flatten)]
    pub select: Selection,
    /// Initial prompt for every image. Without it each image is captioned.
    #[arg(long)]
    pub prompt: Option<String>,
    /// JSON-Lines `{"id": .., "prompt": ..}`; wins over --prompt.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Run all iterations even when the analyzer reports nothing.
    #[arg(long)]
    pub no_early_stop: bool,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[command(flatten)]
    pub select: Selection,
    /// `paper_faithful` inpaints all regions from the same input; `sequential`
    /// folds each region in before the next.
    #[arg(long)]
    pub mode: Option<InpaintMode>,
    /// Save each region's raw inpainter output too.
    #[arg(long)]
    pub persist_regions: bool,
}

#[derive(Debug, Deserialize)]
struct PromptLine {
    id: String,
    prompt: String,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    id: String,
    status: RunStatus,
    iterations: usize,
    stopped_early: bool,
    initial_score: Option<f64>,
    final_score: Option<f64>,
    run_log: String,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Summary {
    schema_version: &'static str,
    kind: &'static str,
    runs: Vec<RunSummary>,
    /// Over completed runs that have both scores.
    growth: Option<GrowthReport>,
}

pub fn run(ctx: &Ctx, cmd: RefineCmd) -> anyhow::Result<()> {
    match cmd {
        RefineCmd::Regen(a) => regen(ctx, a),
        RefineCmd::Inpaint(a) => inpaint(ctx, a),
    }
}

fn select<'a>(m: &'a DatasetManifest, ids: &[String]) -> anyhow::Result<Vec<&'a AnnotatedImage>> {
    if ids.is_empty() {
        return Ok(m.entries.iter().collect());
    }
    ids.iter()
        .map(|id| m.get(id).ok_or_else(|| exit::usage(format!("no entry `{id}` in the manifest"))))
        .collect()
}

/// Everything one run leaves behind.
struct Finished {
    summary: RunSummary,
    log_json: serde_json::Value,
    images: Vec<(String, RgbImage)>,
}

fn persist(ctx: &Ctx, kind: &str, runs: Vec<Finished>) -> anyhow::Result<()> {
    let mut summaries = Vec::new();
    for r in runs {
        let dir = format!("{kind}/{}", r.summary.id);
        ctx.write_json(&format!("{dir}/run_log.json"), &r.log_json)?;
        for (name, img) in &r.images {
            let path = ctx.out_path(&format!("{dir}/{name}"))?;
            img.save(&path).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
        }
        summaries.push(r.summary);
    }
    let (pre, post): (Vec<f64>, Vec<f64>) = summaries
        .iter()
        .filter(|s| s.status == RunStatus::Completed)
        .filter_map(|s| Some((s.initial_score?, s.final_score?)))
        .unzip();
    let growth = match growth_rate(&pre, &post) {
        Ok(g) => Some(g),
        Err(e) => {
            if !pre.is_empty() {
                log::warn!("no growth figure: {e}");
            }
            None
        }
    };
    if let Some(g) = &growth {
        println!(
            "score growth over {} run(s): {:.2}% (ratio of means), {} (per-sample mean)",
            g.n,
            g.growth_ratio_of_means,
            g.growth_per_sample_mean.map_or("undefined".into(), |v| format!("{v:.2}%"))
        );
    }
    let aborted: Vec<String> = summaries
        .iter()
        .filter(|s| s.status == RunStatus::Aborted)
        .map(|s| format!("{}: {}", s.id, s.error.as_deref().unwrap_or("aborted")))
        .collect();
    let done = summaries.len() - aborted.len();
    let path = ctx.write_json(
        &format!("{kind}_summary.json"),
        &Summary {
            schema_version: SCHEMA_VERSION,
            kind: if kind == "regen" { "regen_summary" } else { "inpaint_summary" },
            runs: summaries,
            growth,
        },
    )?;
    println!("{done} run(s) completed; summary at {}", path.display());
    if aborted.is_empty() {
        return Ok(());
    }
    for a in &aborted {
        eprintln!("  {a}");
    }
    Err(exit::backend(format!("{} run(s) aborted", aborted.len())))
}

fn regen(ctx: &Ctx, a: RegenArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options {
        iters: a.select.iters,
        early_stop: a.no_early_stop.then_some(false),
        score: a.select.no_score.then_some(false),
        prompt: a.prompt.clone(),
        ..Default::default()
    });
    ctx.echo(&options, Some(&a.select.manifest))?;
    let m = load_valid_manifest(&a.select.manifest)?;
    let entries = select(&m, &a.select.ids)?;
    let per_id: BTreeMap<String, String> = match &a.prompts {
        Some(p) => read_jsonl::<PromptLine>(p)?.into_iter().map(|l| (l.id, l.prompt)).collect(),
        None => BTreeMap::new(),
    };
    let defaults = RegenConfig::default();
    let config = RegenConfig {
        max_iters: options.iters.unwrap_or(defaults.max_iters),
        seed: options.seed(),
        early_stop: options.early_stop.unwrap_or(true),
        score: options.score.unwrap_or(true),
        ..defaults
    };
    let suite: BackendSuite = ctx.suite(&m)?;
    let runs = bounded_map(&entries, options.concurrency(), |_, e| -> anyhow::Result<Finished> {
        let img = m.load_image(e)?;
        let prompt = per_id.get(&e.id).or(options.prompt.as_ref());
        let (log, images, error) = match run_regeneration(&img, prompt.map(String::as_str), Some(&e.id), &suite, &config) {
            Ok(out) => (out.log, out.images, None),
            Err(abort) => (abort.log, abort.images, Some(abort.error.to_string())),
        };
        Ok(Finished {
            summary: RunSummary {
                id: e.id.clone(),
                status: log.status,
                iterations: log.iterations.len(),
                stopped_early: log.stopped_early,
                initial_score: log.iterations.first().and_then(|s| s.score),
                final_score: log.iterations.last().and_then(|s| s.score),
                run_log: format!("regen/{}/run_log.json", e.id),
                error,
            },
            log_json: serde_json::to_value(&log)?,
            images,
        })
    });
    persist(ctx, "regen", runs.into_iter().collect::<anyhow::Result<_>>()?)
}

fn inpaint(ctx: &Ctx, a: InpaintArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options {
        iters: a.select.iters,
        mode: a.mode,
        score: a.select.no_score.then_some(false),
        persist_regions: a.persist_regions.then_some(true),
        ..Default::default()
    });
    ctx.echo(&options, Some(&a.select.manifest))?;
    let m = load_valid_manifest(&a.select.manifest)?;
    let entries = select(&m, &a.select.ids)?;
    let defaults = InpaintConfig::default();
    let config = InpaintConfig {
        max_iters: options.iters.unwrap_or(defaults.max_iters),
        mode: options.mode.unwrap_or_default(),
        seed: options.seed(),
        max_concurrency: options.concurrency(),
        persist_regions: options.persist_regions.unwrap_or(false),
        score: options.score.unwrap_or(true),
    };
    let suite = ctx.suite(&m)?;
    let runs = bounded_map(&entries, options.concurrency(), |_, e| -> anyhow::Result<Finished> {
        let img = m.load_image(e)?;
        let (log, mut images, error) = match run_inpainting(&img, Some(&e.id), &suite, &config) {
            Ok(out) => {
                let mut images = out.images;
                images.push(("final.png".into(), out.final_image));
                (out.log, images, None)
            }
            Err(abort) => (abort.log, abort.images, Some(abort.error.to_string())),
        };
        images.dedup_by(|x, y| x.0 == y.0);
        Ok(Finished {
            summary: RunSummary {
                id: e.id.clone(),
                status: log.status,
                iterations: log.iterations.len(),
                stopped_early: log.stopped_early,
                initial_score: log.initial_score,
                final_score: log.iterations.last().and_then(|s| s.score).or(log.initial_score),
                run_log: format!("inpaint/{}/run_log.json", e.id),
                error,
            },
            log_json: serde_json::to_value(&log)?,
            images,
        })
    });
    persist(ctx, "inpaint", runs.into_iter().collect::<anyhow::Result<_>>()?)
}
