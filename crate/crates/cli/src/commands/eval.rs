use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Subcommand};
use forgeline_core::annotation::{BinaryMask, DatasetManifest, Label, RleMask};
use forgeline_core::backends::{AnalyzerReport, BackendSuite};
use forgeline_core::eval::{detection_accuracy, detection_records, growth_rate, segmentation_report, text_report};
use forgeline_core::parallel::bounded_map;
use forgeline_core::text_metrics::{align_format, format_regions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::context::{load_valid_manifest, Ctx};
use crate::exit;
use crate::options::Options;

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// mIoU and F1 of predicted masks, macro and micro, by content type.
    Seg(PredictArgs),
    /// ROUGE-L and CSS of explanations against the annotated ones.
    Text(TextArgs),
    /// Real/fake accuracy per generator.
    Detect(DetectArgs),
    /// Relative growth of paired scores.
    Growth(GrowthArgs),
}

impl EvalCmd {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Seg(_) => "seg",
            Self::Text(_) => "text",
            Self::Detect(_) => "detect",
            Self::Growth(_) => "growth",
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON-Lines predictions keyed by `id`. Without it the analyzer backend
    /// is run over the manifest and its outputs saved to `predictions.jsonl`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TextArgs {
    #[command(flatten)]
    pub input: PredictArgs,
    /// Skip CSS; no embedder is contacted.
    #[arg(long)]
    pub no_css: bool,
    /// Reformat free-form explanations into `location: explanation` lines first.
    #[arg(long)]
    pub align: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: PredictArgs,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GrowthArgs {
    /// JSON-Lines file of `{"pre": .., "post": ..}` pairs.
    #[arg(long, conflicts_with_all = ["pre", "post"])]
    pub scores: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', requires = "post")]
    pub pre: Vec<f64>,
    #[arg(long, value_delimiter = ',', requires = "pre")]
    pub post: Vec<f64>,
}

/// One line of a predictions file. Each evaluation reads the field it needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fake_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ScorePair {
    pre: f64,
    post: f64,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| exit::validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn run(ctx: &Ctx, cmd: EvalCmd) -> anyhow::Result<()> {
    match cmd {
        EvalCmd::Seg(a) => seg(ctx, a),
        EvalCmd::Text(a) => text(ctx, a),
        EvalCmd::Detect(a) => detect(ctx, a),
        EvalCmd::Growth(a) => growth(ctx, a),
    }
}

/// Runs the analyzer over every entry. Failed entries are reported and
/// dropped; the caller decides whether that fails the run.
pub fn analyze_manifest(
    manifest: &DatasetManifest,
    suite: &BackendSuite,
    concurrency: usize,
) -> anyhow::Result<(Vec<PredictionLine>, Vec<String>)> {
    let analyzer = suite.analyzer().map_err(exit::backend)?;
    let results = bounded_map(&manifest.entries, concurrency, |_, e| {
        let img = manifest.load_image(e).map_err(|err| err.to_string())?;
        let report: AnalyzerReport = analyzer.analyze(&img, Some(&e.id)).map_err(|err| err.to_string())?;
        let mask = report.union_mask(e.width, e.height)?;
        Ok::<_, String>(PredictionLine {
            id: e.id.clone(),
            fake_prob: Some(report.fake_prob),
            mask: Some(mask.to_rle()),
            explanation: Some(format_regions(
                report.regions.iter().map(|r| (r.location.as_str(), r.explanation.as_str())),
            )),
        })
    });
    let mut lines = Vec::new();
    let mut errors = Vec::new();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(l) => lines.push(l),
            Err(err) => errors.push(format!("{}: {err}", e.id)),
        }
    }
    Ok((lines, errors))
}

/// Predictions from a file, or from the analyzer (saved alongside the report).
fn predictions(ctx: &Ctx, a: &PredictArgs, m: &DatasetManifest, options: &Options) -> anyhow::Result<(Vec<PredictionLine>, Vec<String>)> {
    match &a.predictions {
        Some(p) => Ok((read_jsonl(p)?, Vec::new())),
        None => {
            let suite = ctx.suite(m)?;
            let (lines, errors) = analyze_manifest(m, &suite, options.concurrency())?;
            let text: String = lines
                .iter()
                .map(|l| serde_json::to_string(l).map(|s| s + "\n"))
                .collect::<Result<_, _>>()?;
            ctx.write_text("predictions.jsonl", &text)?;
            Ok((lines, errors))
        }
    }
}

fn backend_errors(errors: &[String]) -> anyhow::Result<()> {
    if errors.is_empty() {
        return Ok(());
    }
    for e in errors {
        eprintln!("  {e}");
    }
    Err(exit::backend(format!("analyzer failed on {} image(s)", errors.len())))
}

fn seg(ctx: &Ctx, a: PredictArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options::default());
    ctx.echo(&options, Some(&a.manifest))?;
    let m = load_valid_manifest(&a.manifest)?;
    let (lines, analyzer_errors) = predictions(ctx, &a, &m, &options)?;
    let mut masks: BTreeMap<String, BinaryMask> = BTreeMap::new();
    for l in lines {
        if let Some(rle) = l.mask {
            let mask = rle.decode().map_err(|e| exit::validation(format!("{}: {e}", l.id)))?;
            masks.insert(l.id, mask);
        }
    }
    let mut report = segmentation_report(&m, &masks);
    report.errors.extend(analyzer_errors.iter().cloned());
    let path = ctx.write_json("seg_report.json", &report)?;
    if let Some(o) = &report.overall {
        println!("{:<10} {:>6} {:>8} {:>8} {:>8} {:>8}", "group", "n", "mIoU", "F1", "mIoU(µ)", "F1(µ)");
        let row = |name: &str, s: &forgeline_core::eval::SegSummary| {
            println!(
                "{name:<10} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                s.n, s.r#macro.miou, s.r#macro.f1, s.micro.miou, s.micro.f1
            )
        };
        for (k, s) in &report.by_content_type {
            row(k, s);
        }
        row("overall", o);
    }
    println!("report at {}", path.display());
    backend_errors(&analyzer_errors)
}

fn text(ctx: &Ctx, a: TextArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options {
        css: a.no_css.then_some(false),
        ..Default::default()
    });
    ctx.echo(&options, Some(&a.input.manifest))?;
    let m = load_valid_manifest(&a.input.manifest)?;
    let (lines, analyzer_errors) = predictions(ctx, &a.input, &m, &options)?;
    let candidates: BTreeMap<String, String> = lines
        .into_iter()
        .filter_map(|l| {
            let text = l.explanation?;
            Some((l.id, if a.align { align_format(&text) } else { text }))
        })
        .collect();
    let embedder = if options.css.unwrap_or(true) {
        let suite = ctx.suite(&m)?;
        Some(suite.embedder().map_err(exit::backend)?)
    } else {
        None
    };
    let mut report = text_report(&m, &candidates, embedder.as_deref());
    let missing = m
        .entries
        .iter()
        .filter(|e| e.label == Label::Fake && !candidates.contains_key(&e.id))
        .count();
    let css_failures = report.errors.len() - missing;
    report.errors.extend(analyzer_errors.iter().cloned());
    let path = ctx.write_json("text_report.json", &report)?;
    let fmt_css = |c: Option<f64>| c.map_or("-".to_owned(), |v| format!("{v:.2}"));
    println!("{:<10} {:>6} {:>8} {:>8}", "group", "n", "ROUGE-L", "CSS");
    for (k, t) in &report.by_content_type {
        println!("{k:<10} {:>6} {:>8.2} {:>8}", t.n, t.rouge_l, fmt_css(t.css));
    }
    if let Some(t) = &report.overall {
        println!("{:<10} {:>6} {:>8.2} {:>8}", "overall", t.n, t.rouge_l, fmt_css(t.css));
    }
    println!("report at {}", path.display());
    if css_failures > 0 {
        return Err(exit::backend(format!("embedder failed on {css_failures} sample(s)")));
    }
    backend_errors(&analyzer_errors)
}

fn detect(ctx: &Ctx, a: DetectArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options {
        threshold: a.threshold,
        ..Default::default()
    });
    let threshold = options.threshold.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(exit::usage(format!("threshold {threshold} outside [0, 1]")));
    }
    ctx.echo(&options, Some(&a.input.manifest))?;
    let m = load_valid_manifest(&a.input.manifest)?;
    let (lines, analyzer_errors) = predictions(ctx, &a.input, &m, &options)?;
    let probs: BTreeMap<String, f64> = lines.into_iter().filter_map(|l| Some((l.id, l.fake_prob?))).collect();
    let missing = m.entries.iter().filter(|e| !probs.contains_key(&e.id)).count();
    if missing > 0 {
        log::warn!("{missing} entries have no probability and are left out");
    }
    let records = detection_records(&m, &probs);
    let report = detection_accuracy(&records, threshold).map_err(exit::validation)?;
    let path = ctx.write_json("detection_report.json", &report)?;
    println!("{:<14} {:>6} {:>9}", "group", "n", "accuracy");
    for (g, acc) in &report.groups {
        println!("{g:<14} {:>6} {:>9.2}", acc.n, acc.accuracy);
    }
    println!("{:<14} {:>6} {:>9.2}", "overall", report.overall.n, report.overall.accuracy);
    println!("report at {}", path.display());
    backend_errors(&analyzer_errors)
}

fn growth(ctx: &Ctx, a: GrowthArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options::default());
    ctx.echo(&options, None)?;
    let (pre, post): (Vec<f64>, Vec<f64>) = match &a.scores {
        Some(p) => read_jsonl::<ScorePair>(p)?.into_iter().map(|s| (s.pre, s.post)).unzip(),
        None if !a.pre.is_empty() => (a.pre.clone(), a.post.clone()),
        None => return Err(exit::usage("give --scores FILE or --pre/--post lists")),
    };
    let report = growth_rate(&pre, &post).map_err(exit::validation)?;
    let path = ctx.write_json("growth_report.json", &report)?;
    println!("n = {}, pre mean {:.4}, post mean {:.4}", report.n, report.pre_mean, report.post_mean);
    println!("growth (ratio of means): {:.2}%", report.growth_ratio_of_means);
    match report.growth_per_sample_mean {
        Some(g) => println!("growth (per-sample mean): {g:.2}%"),
        None => println!("growth (per-sample mean): undefined"),
    }
    println!("report at {}", path.display());
    Ok(())
}
