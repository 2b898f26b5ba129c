use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Subcommand};
use forgeline_core::curation::{
    extract_features, judge_filter, kmeans_cluster, stratified_sample, JudgeResult, KMeansResult, CURATION_PROMPT,
};
use serde::{Deserialize, Serialize};

use crate::context::{absolutize, load_valid_manifest, Ctx, SCHEMA_VERSION};
use crate::exit;
use crate::options::Options;

#[derive(Debug, Subcommand)]
pub enum CurateCmd {
    /// Embed every image and group the embeddings with k-means.
    Cluster(ClusterArgs),
    /// Draw up to N images from each cluster.
    Sample(SampleArgs),
    /// Ask the judge about every image and keep the acceptable ones.
    Filter(FilterArgs),
}

impl CurateCmd {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cluster(_) => "cluster",
            Self::Sample(_) => "sample",
            Self::Filter(_) => "filter",
        }
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub kmeans_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// A `clusters.json` written by `curate cluster`.
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    /// Also write the sampled entries of this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Replace the built-in judge instruction.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterOut {
    schema_version: String,
    kind: String,
    ids: Vec<String>,
    #[serde(flatten)]
    result: KMeansResult,
}

#[derive(Debug, Serialize)]
struct SampleOut {
    schema_version: &'static str,
    kind: &'static str,
    n_per_cluster: usize,
    seed: u64,
    ids: Vec<String>,
    cluster_sizes: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
struct FilterOut {
    schema_version: &'static str,
    kind: &'static str,
    results: Vec<JudgeResult>,
    kept: Vec<String>,
    failed: Vec<String>,
    counts: BTreeMap<String, usize>,
}

pub fn run(ctx: &Ctx, cmd: CurateCmd) -> anyhow::Result<()> {
    match cmd {
        CurateCmd::Cluster(a) => cluster(ctx, a),
        CurateCmd::Sample(a) => sample(ctx, a),
        CurateCmd::Filter(a) => filter(ctx, a),
    }
}

fn cluster(ctx: &Ctx, a: ClusterArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options {
        k: a.k,
        kmeans_iters: a.kmeans_iters,
        ..Default::default()
    });
    ctx.echo(&options, Some(&a.manifest))?;
    let m = load_valid_manifest(&a.manifest)?;
    let suite = ctx.suite(&m)?;
    let embedder = suite.embedder().map_err(exit::backend)?;
    let features = extract_features(&m, embedder.as_ref(), options.concurrency()).map_err(exit::backend)?;
    let k = options.k.unwrap_or(8);
    let result = kmeans_cluster(&features, k, options.seed(), options.kmeans_iters.unwrap_or(100))
        .map_err(|e| exit::usage(e.to_string()))?;
    let mut sizes = vec![0usize; result.k];
    for &c in &result.assignments {
        sizes[c] += 1;
    }
    let out = ClusterOut {
        schema_version: SCHEMA_VERSION.into(),
        kind: "cluster".into(),
        ids: features.ids().to_vec(),
        result,
    };
    let path = ctx.write_json("clusters.json", &out)?;
    println!(
        "{} images in {} clusters (sizes {:?}) after {} iteration(s){}; written to {}",
        out.ids.len(),
        out.result.k,
        sizes,
        out.result.iterations,
        if out.result.converged { "" } else { ", not converged" },
        path.display()
    );
    Ok(())
}

fn sample(ctx: &Ctx, a: SampleArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options {
        n_per_cluster: a.n,
        ..Default::default()
    });
    ctx.echo(&options, a.manifest.as_deref())?;
    let text = std::fs::read_to_string(&a.clusters).with_context(|| format!("reading {}", a.clusters.display()))?;
    let clusters: ClusterOut =
        serde_json::from_str(&text).map_err(|e| exit::validation(format!("{}: {e}", a.clusters.display())))?;
    if clusters.ids.len() != clusters.result.assignments.len() {
        return Err(exit::validation(format!(
            "{}: {} ids for {} assignments",
            a.clusters.display(),
            clusters.ids.len(),
            clusters.result.assignments.len()
        )));
    }
    let n = options.n_per_cluster.unwrap_or(10);
    let picked = stratified_sample(&clusters.result.assignments, n, options.seed());
    let mut cluster_sizes = BTreeMap::new();
    for &c in &clusters.result.assignments {
        *cluster_sizes.entry(c.to_string()).or_insert(0) += 1;
    }
    let ids: Vec<String> = picked.iter().map(|&i| clusters.ids[i].clone()).collect();
    ctx.write_json(
        "sample.json",
        &SampleOut {
            schema_version: SCHEMA_VERSION,
            kind: "sample",
            n_per_cluster: n,
            seed: options.seed(),
            ids: ids.clone(),
            cluster_sizes,
        },
    )?;
    println!("sampled {} of {} images", ids.len(), clusters.ids.len());
    if let Some(path) = &a.manifest {
        let m = load_valid_manifest(path)?;
        let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let mut sub = absolutize(&m);
        sub.entries.retain(|e| keep.contains(e.id.as_str()));
        if sub.entries.len() != ids.len() {
            return Err(exit::validation(format!(
                "{} lacks {} sampled id(s)",
                path.display(),
                ids.len() - sub.entries.len()
            )));
        }
        let out = ctx.out_path("sampled_manifest.jsonl")?;
        sub.save(&out).with_context(|| format!("writing {}", out.display()))?;
        println!("sampled manifest at {}", out.display());
    }
    Ok(())
}

fn filter(ctx: &Ctx, a: FilterArgs) -> anyhow::Result<()> {
    let options = ctx.options(Options::default());
    ctx.echo(&options, Some(&a.manifest))?;
    let prompt = match &a.prompt_file {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => CURATION_PROMPT.to_owned(),
    };
    let m = load_valid_manifest(&a.manifest)?;
    let suite = ctx.suite(&m)?;
    let judge = suite.captioner().map_err(exit::backend)?;
    let report = judge_filter(&m, judge.as_ref(), &prompt, options.concurrency());
    let counts = report.counts();
    let kept = absolutize(&report.kept_manifest(&m));
    let kept_path = ctx.out_path("kept_manifest.jsonl")?;
    kept.save(&kept_path)
        .with_context(|| format!("writing {}", kept_path.display()))?;
    // no raw answer means the call itself failed, not the judge's label
    let unreachable = report.results.iter().filter(|r| r.raw.is_none()).count();
    ctx.write_json(
        "judge_report.json",
        &FilterOut {
            schema_version: SCHEMA_VERSION,
            kind: "filter",
            results: report.results,
            kept: report.kept,
            failed: report.failed,
            counts: counts.clone(),
        },
    )?;
    for (label, n) in &counts {
        println!("{label:<20} {n:>6}");
    }
    println!("kept manifest at {}", kept_path.display());
    if unreachable > 0 {
        return Err(exit::backend(format!("{unreachable} judge call(s) failed")));
    }
    Ok(())
}
