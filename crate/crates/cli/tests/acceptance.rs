//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use forgeline_core::annotation::{rasterize_polygon, rle_decode, rle_encode, BinaryMask, Label, Polygon};
use forgeline_core::backends::mock::{
    build_mock_suite, ConstantFillInpainter, GeneratorKind, IdentityInpainter, InpainterKind, MockConfig, Oracle,
    OracleMode, PerfectInpainter,
};
use forgeline_core::backends::{Analyzer, AnalyzerReport, BackendError, BackendSuite, Inpainter, ReportRegion};
use forgeline_core::eval::growth_rate;
use forgeline_core::fixtures;
use forgeline_core::perturb::{gaussian_blur, jpeg_compress, robustness_report, PerturbSpec};
use forgeline_core::refine::{
    run_inpainting, run_regeneration, InpaintConfig, InpaintMode, InpaintOutput, RegenConfig, RunStatus,
};
use forgeline_core::rng;
use forgeline_core::seg_metrics::{
    bce_loss, dice_loss, segmentation_scores, stage1_loss, stage2_loss, token_ce_loss, LossWeights,
};
use forgeline_core::text_metrics::{rouge_l, rouge_l_tokens};
use image::{Rgb, RgbImage};
use jsonschema::JSONSchema;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

struct Rand {
    seed: u64,
    n: u64,
}

impl Rand {
    fn new(seed: u64) -> Self {
        Self { seed, n: 0 }
    }

    fn next(&mut self) -> u64 {
        self.n += 1;
        rng::keyed(self.seed, self.n)
    }

    fn unit(&mut self) -> f64 {
        rng::unit_f64(self.next())
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    fn mask(&mut self, w: u32, h: u32, density: f64) -> BinaryMask {
        let bits = (0..w * h).map(|_| self.unit() < density).collect();
        BinaryMask::from_bits(w, h, bits).unwrap()
    }

    fn image(&mut self, w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| {
            let v = self.next();
            Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
        })
    }
}

fn schema(name: &str) -> JSONSchema {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    JSONSchema::compile(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn schema_errors(s: &JSONSchema, v: &Value) -> Vec<String> {
    match s.validate(v) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{e} at {}", e.instance_path)).collect(),
    }
}

// 1. mIoU and F1 against a brute-force counting oracle.
fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = Rand::new(1);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let density = [0.0, 0.05, 0.3, 0.5, 0.9, 1.0][i % 6];
        let pred = r.mask(32, 32, density);
        let d = r.unit();
        let gt = r.mask(32, 32, d);
        let (mut tp, mut fp, mut fn_, mut tn) = (0u32, 0u32, 0u32, 0u32);
        for y in 0..32 {
            for x in 0..32 {
                match (pred.get(x, y), gt.get(x, y)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        let safe = |n: u32, d: u32| if d == 0 { 1.0 } else { f64::from(n) / f64::from(d) };
        let miou = (safe(tp, tp + fp + fn_) + safe(tn, tn + fp + fn_)) / 2.0;
        let f1 = safe(2 * tp, 2 * tp + fp + fn_);
        let s = segmentation_scores(&pred, &gt).map_err(|e| e.to_string())?;
        worst = worst.max((s.miou - miou).abs()).max((s.f1 - f1).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    ensure!(elapsed < 5.0, "took {elapsed:.2}s");
    Ok(format!("200 pairs, max deviation {worst:e}, {elapsed:.3}s"))
}

// 2. ROUGE-L against a full-table LCS.
fn rouge_oracle() -> Outcome {
    fn lcs_table(a: &[u64], b: &[u64]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] {
                    t[i - 1][j - 1] + 1
                } else {
                    t[i - 1][j].max(t[i][j - 1])
                };
            }
        }
        t[a.len()][b.len()]
    }
    let mut r = Rand::new(2);
    for i in 0..500 {
        let la = r.below(31) as usize;
        let lb = r.below(31) as usize;
        let vocab = 2 + r.below(8);
        let a: Vec<u64> = (0..la).map(|_| r.below(vocab)).collect();
        let b: Vec<u64> = (0..lb).map(|_| r.below(vocab)).collect();
        let l = lcs_table(&a, &b) as f64;
        let expected = match (la, lb) {
            (0, 0) => 100.0,
            _ if l == 0.0 => 0.0,
            _ => {
                let (p, rc) = (l / la as f64, l / lb as f64);
                100.0 * 2.0 * p * rc / (p + rc)
            }
        };
        let got = rouge_l_tokens(&a, &b);
        ensure!(got == expected, "pair {i}: {got} vs {expected}");
        if la + lb > 0 {
            ensure!((got - 200.0 * l / (la + lb) as f64).abs() < 1e-9, "pair {i}: F-measure identity");
        }
    }
    let cat = rouge_l("the cat sat", "the cat ran");
    ensure!((cat - 66.67).abs() <= 0.01, "cat example scored {cat}");
    Ok(format!("500 pairs exact; \"the cat sat\" vs \"the cat ran\" = {cat:.2}"))
}

// 3. RLE roundtrip and polygon rasterization.
fn rle_and_raster() -> Outcome {
    let mut r = Rand::new(3);
    for i in 0..1000 {
        let w = 1 + r.below(40) as u32;
        let h = 1 + r.below(40) as u32;
        let d = r.unit();
        let m = r.mask(w, h, d);
        let rle = rle_encode(&m);
        let back = rle_decode(&rle.counts, w, h).map_err(|e| e.to_string())?;
        ensure!(back == m, "mask {i} ({w}x{h}) did not roundtrip");
    }
    for i in 0..100 {
        let (w, h) = (48u32, 40u32);
        // an ellipse inside the canvas: vertices on it in angular order are convex
        let (rx, ry) = (3.0 + r.unit() * 15.0, 3.0 + r.unit() * 12.0);
        let cx = rx + r.unit() * (f64::from(w) - 2.0 * rx);
        let cy = ry + r.unit() * (f64::from(h) - 2.0 * ry);
        let n = 3 + r.below(6) as usize;
        let mut angles: Vec<f64> = (0..n).map(|_| r.unit() * std::f64::consts::TAU).collect();
        angles.sort_by(f64::total_cmp);
        let verts: Vec<[f64; 2]> = angles.iter().map(|a| [cx + rx * a.cos(), cy + ry * a.sin()]).collect();
        // convex, so inside means the same side of every edge
        let inside = |px: f64, py: f64| {
            let mut sign = 0.0f64;
            for k in 0..n {
                let [x0, y0] = verts[k];
                let [x1, y1] = verts[(k + 1) % n];
                let c = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
                if c == 0.0 {
                    continue;
                }
                if sign == 0.0 {
                    sign = c.signum();
                } else if c.signum() != sign {
                    return false;
                }
            }
            true
        };
        let mask = match rasterize_polygon(&Polygon::new(verts.clone()), w, h) {
            Ok(m) => m,
            // collinear draws are rejected as degenerate; nothing to compare
            Err(_) => continue,
        };
        for y in 0..h {
            for x in 0..w {
                let want = inside(f64::from(x) + 0.5, f64::from(y) + 0.5);
                ensure!(mask.get(x, y) == want, "polygon {i}: pixel ({x},{y}) is {} but oracle says {want}", mask.get(x, y));
            }
        }
    }
    Ok("1000 masks roundtrip; 100 convex polygons match pixel-center containment".into())
}

struct StripeAnalyzer {
    masks: Vec<BinaryMask>,
}

impl Analyzer for StripeAnalyzer {
    fn analyze(&self, _: &RgbImage, _: Option<&str>) -> Result<AnalyzerReport, BackendError> {
        let regions = self
            .masks
            .iter()
            .enumerate()
            .map(|(i, m)| ReportRegion {
                location: format!("stripe {i}"),
                mask: m.to_rle(),
                artifact_type: None,
                explanation: format!("stripe {i} looks wrong"),
            })
            .collect();
        Ok(AnalyzerReport::from_regions(regions, 0.9))
    }
}

/// Random masks confined to separate vertical stripes, so pairwise disjoint.
fn disjoint_masks(r: &mut Rand, w: u32, h: u32, n: u32) -> Vec<BinaryMask> {
    (0..n)
        .map(|k| {
            let (lo, hi) = (k * w / n, (k + 1) * w / n);
            let m = r.mask(w, h, 0.4);
            BinaryMask::from_fn(w, h, |x, y| x >= lo && x < hi && m.get(x, y)).unwrap()
        })
        .collect()
}

fn iteration_images(out: &InpaintOutput) -> Vec<&RgbImage> {
    out.images.iter().filter(|(n, _)| !n.contains("region")).map(|(_, i)| i).collect()
}

// 4. Compositing.
fn compositing() -> Outcome {
    let m = fixtures::inline_manifest(10, 4);
    let oracle = Arc::new(Oracle::from_manifest(&m).map_err(|e| e.to_string())?);
    let inpainters: Vec<(&str, Arc<dyn Inpainter>)> = vec![
        ("identity", Arc::new(IdentityInpainter)),
        ("perfect", Arc::new(PerfectInpainter { oracle: oracle.clone() })),
        ("constant_fill", Arc::new(ConstantFillInpainter { color: [3, 200, 7] })),
    ];
    let mut r = Rand::new(4);
    let mut checked_iters = 0;
    for e in m.entries.iter().filter(|e| e.label == Label::Fake) {
        let img = m.load_image(e).map_err(|e| e.to_string())?;
        let (w, h) = img.dimensions();
        let masks = disjoint_masks(&mut r, w, h, 3);
        let union = BinaryMask::union(w, h, &masks).map_err(|e| e.to_string())?;
        for (name, inp) in &inpainters {
            let suite = BackendSuite {
                analyzer: Some(Arc::new(StripeAnalyzer { masks: masks.clone() })),
                inpainter: Some(inp.clone()),
                ..Default::default()
            };
            let run = |mode| {
                let cfg = InpaintConfig { mode, score: false, ..Default::default() };
                run_inpainting(&img, Some(&e.id), &suite, &cfg).map_err(|a| a.error.to_string())
            };
            let faithful = run(InpaintMode::PaperFaithful)?;
            let sequential = run(InpaintMode::Sequential)?;
            ensure!(
                faithful.final_image == sequential.final_image,
                "{}: {name}: modes disagree on disjoint masks",
                e.id
            );
            ensure!(
                iteration_images(&faithful) == iteration_images(&sequential),
                "{}: {name}: per-iteration images differ between modes",
                e.id
            );
            let frames = iteration_images(&faithful);
            ensure!(frames.len() == 4, "{}: {name}: expected 3 iterations, got {}", e.id, frames.len() - 1);
            for t in 0..frames.len() - 1 {
                for (x, y, p) in frames[t + 1].enumerate_pixels() {
                    ensure!(
                        union.get(x, y) || p == frames[t].get_pixel(x, y),
                        "{}: {name}: out-of-mask pixel ({x},{y}) changed at iteration {t}",
                        e.id
                    );
                }
                checked_iters += 1;
            }
            if *name == "identity" {
                ensure!(faithful.final_image == img, "{}: identity inpainting changed the image", e.id);
                ensure!(frames.iter().all(|f| **f == img), "{}: identity changed an iteration", e.id);
            }
        }
        // and the stock oracle analyzer with the mock suite
        for kind in [InpainterKind::Identity, InpainterKind::Perfect, InpainterKind::ConstantFill] {
            let suite = build_mock_suite(&m, &MockConfig { inpainter_kind: kind, ..Default::default() })
                .map_err(|e| e.to_string())?;
            let out = run_inpainting(&img, Some(&e.id), &suite, &InpaintConfig::default())
                .map_err(|a| a.error.to_string())?;
            let by_name: BTreeMap<&str, &RgbImage> = out.images.iter().map(|(n, i)| (n.as_str(), i)).collect();
            for step in &out.log.iterations {
                let Some(composed) = &step.composed_ref else { continue };
                let (before, after) = (by_name[step.input_ref.as_str()], by_name[composed.as_str()]);
                let mut u = BinaryMask::new(w, h).unwrap();
                for tr in &step.triplets {
                    u.or_assign(&tr.mask.decode().map_err(|e| e.to_string())?);
                }
                for (x, y, p) in after.enumerate_pixels() {
                    ensure!(
                        u.get(x, y) || p == before.get_pixel(x, y),
                        "{}: {kind:?}: pixel ({x},{y}) outside the reported masks changed",
                        e.id
                    );
                }
                checked_iters += 1;
            }
            if kind == InpainterKind::Identity {
                ensure!(out.final_image == img, "{}: identity mock changed the image", e.id);
            }
        }
    }
    Ok(format!("identity is byte-identical; out-of-mask pixels preserved over {checked_iters} iterations; modes agree on disjoint masks"))
}

// 5. Convergence under the oracle analyzer and perfect inpainter.
fn convergence() -> Outcome {
    let m = fixtures::inline_manifest(10, 5);
    let oracle = Oracle::from_manifest(&m).map_err(|e| e.to_string())?;
    let suite = build_mock_suite(
        &m,
        &MockConfig {
            inpainter_kind: InpainterKind::Perfect,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut fakes = 0;
    for e in &m.entries {
        let img = m.load_image(e).map_err(|e| e.to_string())?;
        let out = run_inpainting(&img, Some(&e.id), &suite, &InpaintConfig::default()).map_err(|a| a.error.to_string())?;
        let counts = iteration_images(&out)
            .iter()
            .map(|i| oracle.artifact_pixels(&e.id, i))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        ensure!(counts.windows(2).all(|w| w[1] <= w[0]), "{}: not monotone {counts:?}", e.id);
        ensure!(counts.last() == Some(&0), "{}: ended at {counts:?}", e.id);
        ensure!(out.log.iterations.len() <= 3, "{}: {} iterations", e.id, out.log.iterations.len());
        if e.label == Label::Fake {
            fakes += 1;
            ensure!(counts[0] > 0, "{}: fake fixture has no artifact pixels", e.id);
        }
    }
    Ok(format!("10 fixtures ({fakes} fake) reach 0 artifact pixels monotonically within 3 iterations"))
}

// 6. Regeneration bookkeeping and determinism.
fn bookkeeping() -> Outcome {
    let m = fixtures::inline_manifest(10, 6);
    let config = MockConfig {
        generator_kind: GeneratorKind::Static,
        oracle_mode: OracleMode::GroundTruth,
        ..Default::default()
    };
    let suite = build_mock_suite(&m, &config).map_err(|e| e.to_string())?;
    let reviser = suite.reviser().map_err(|e| e.to_string())?;
    let defaults = RegenConfig::default();
    ensure!(defaults.max_iters == 2, "default max_iters is {}", defaults.max_iters);
    let mut chains = 0;
    for e in m.entries.iter().filter(|e| e.label == Label::Fake) {
        let img = m.load_image(e).map_err(|e| e.to_string())?;
        let run = || run_regeneration(&img, Some("a photo"), Some(&e.id), &suite, &defaults).map_err(|a| a.error.to_string());
        let out = run()?;
        let log = &out.log;
        ensure!(log.iterations.len() == 3, "{}: {} prompts, expected P0..P2", e.id, log.iterations.len());
        let mut reported = Vec::new();
        for (t, step) in log.iterations.iter().enumerate() {
            ensure!(step.memory_len == reported.len(), "{}: memory {} at t={t}, reported {}", e.id, step.memory_len, reported.len());
            if t > 0 {
                let want = reviser.revise(&log.iterations[t - 1].prompt, &reported).map_err(|e| e.to_string())?;
                ensure!(step.prompt == want, "{}: P{t} = {:?}, expected {:?}", e.id, step.prompt, want);
            }
            if let Some(rep) = &step.analyzer_report {
                reported.extend(rep.regions.iter().map(|r| r.explanation.clone()));
            }
        }
        ensure!(log.memory.len() == reported.len(), "{}: final memory {}", e.id, log.memory.len());
        let a = serde_json::to_vec(log).unwrap();
        let b = serde_json::to_vec(&run()?.log).unwrap();
        ensure!(a == b, "{}: run logs differ between identical runs", e.id);
        chains += 1;
    }
    Ok(format!("{chains} runs: memory tracks reported regions, P0->P1->P2 chain, logs bit-identical"))
}

// 7. Growth arithmetic.
fn growth() -> Outcome {
    let a = growth_rate(&[29.57], &[30.20]).map_err(|e| e.to_string())?.growth_ratio_of_means;
    let b = growth_rate(&[31.24], &[33.36]).map_err(|e| e.to_string())?.growth_ratio_of_means;
    ensure!((a - 2.14).abs() <= 0.05, "first pair gives {a:.4}%");
    ensure!((b - 6.79).abs() < 0.005, "second pair gives {b:.4}%");
    ensure!((b - 6.98).abs() > 0.15, "second pair unexpectedly close to 6.98%: {b:.4}");
    Ok(format!("{a:.2}% (reported 2.14%), {b:.2}% (reported 6.98%, not reproducible from the means)"))
}

// 8. Perturbations.
fn perturbations() -> Outcome {
    let mut r = Rand::new(8);
    let img = r.image(40, 32);
    let grid = PerturbSpec::standard_grid(7);
    for spec in &grid {
        let a = spec.apply(&img, 11).map_err(|e| e.to_string())?;
        let b = spec.apply(&img, 11).map_err(|e| e.to_string())?;
        ensure!(a == b, "{spec} is not deterministic");
        ensure!(a.dimensions() == img.dimensions(), "{spec} changed dimensions");
    }
    ensure!(jpeg_compress(&img, 20).map_err(|e| e.to_string())? != img, "QF 20 left a random image unchanged");
    let board = RgbImage::from_fn(64, 64, |x, y| if (x / 4 + y / 4) % 2 == 0 { Rgb([255; 3]) } else { Rgb([0; 3]) });
    let variance = |i: &RgbImage| {
        let v: Vec<f64> = i.pixels().map(|p| f64::from(p[0])).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
    };
    let v5 = variance(&gaussian_blur(&board, 5).map_err(|e| e.to_string())?);
    let v15 = variance(&gaussian_blur(&board, 15).map_err(|e| e.to_string())?);
    ensure!(v15 < v5, "blur 15 variance {v15} not below blur 5 variance {v5}");

    let m = fixtures::inline_manifest(5, 8);
    let suite = build_mock_suite(&m, &MockConfig::default()).map_err(|e| e.to_string())?;
    let analyzer = suite.analyzer().map_err(|e| e.to_string())?;
    let report = robustness_report(&m, analyzer.as_ref(), &grid, 4);
    let labels: Vec<&str> = report.cells.iter().map(|c| c.label.as_str()).collect();
    let want = [
        "No Distortion",
        "JPEG Comp. (QF = 50)",
        "JPEG Comp. (QF = 35)",
        "JPEG Comp. (QF = 20)",
        "Gaussian Noise (σ = 0.1)",
        "Gaussian Noise (σ = 0.2)",
        "Gaussian Noise (σ = 0.3)",
        "Gaussian Blur (Ksize = 5)",
        "Gaussian Blur (Ksize = 9)",
        "Gaussian Blur (Ksize = 15)",
    ];
    ensure!(labels == want, "rows {labels:?}");
    Ok(format!("deterministic; QF 20 lossy; blur variance {v5:.0} -> {v15:.0}; 10 grid rows"))
}

// 9. Losses against closed forms and a scalar oracle.
fn losses() -> Outcome {
    let w = LossWeights::default();
    ensure!(
        (w.lambda_ce, w.lambda_dice, w.lambda_bce) == (1.0, 0.2, 0.4),
        "default weights {w:?}"
    );
    let mut r = Rand::new(9);
    let gt = r.mask(8, 6, 0.4);
    let perfect: Vec<f64> = gt.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let targets = vec![2usize, 0, 4];
    let onehot: Vec<Vec<f64>> = targets
        .iter()
        .map(|&t| (0..5).map(|k| if k == t { 1.0 } else { 0.0 }).collect())
        .collect();
    let l = stage1_loss(&perfect, &gt, &onehot, &targets, &w).map_err(|e| e.to_string())?;
    ensure!(l.total == 0.0, "perfect stage-1 loss {l:?}");
    ensure!(stage2_loss([0.0, 1.0], Label::Fake).map_err(|e| e.to_string())? == 0.0, "perfect stage-2 loss");
    ensure!(stage2_loss([1.0, 0.0], Label::Real).map_err(|e| e.to_string())? == 0.0, "perfect stage-2 loss");

    let ln2 = std::f64::consts::LN_2;
    let half = vec![0.5; gt.bits().len()];
    let bce = bce_loss(&half, &gt).map_err(|e| e.to_string())?;
    let ce = token_ce_loss(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[0, 1]).map_err(|e| e.to_string())?;
    let s2 = stage2_loss([0.5, 0.5], Label::Fake).map_err(|e| e.to_string())?;
    for (name, v) in [("bce", bce), ("ce", ce), ("stage2", s2)] {
        ensure!((v - ln2).abs() <= 1e-12, "uniform {name} = {v}, expected ln 2");
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (mw, mh) = (1 + r.below(6) as u32, 1 + r.below(6) as u32);
        let d = r.unit();
        let gt = r.mask(mw, mh, d);
        let probs: Vec<f64> = (0..mw * mh).map(|_| r.unit()).collect();
        let vocab = 2 + r.below(5) as usize;
        let len = r.below(5) as usize;
        let mut dists = Vec::new();
        let mut toks = Vec::new();
        for _ in 0..len {
            let raw: Vec<f64> = (0..vocab).map(|_| 0.05 + r.unit()).collect();
            let z: f64 = raw.iter().sum();
            dists.push(raw.iter().map(|x| x / z).collect::<Vec<f64>>());
            toks.push(r.below(vocab as u64) as usize);
        }
        // scalar oracle
        let n = probs.len() as f64;
        let mut o_bce = 0.0;
        let (mut inter, mut ps, mut gs) = (0.0, 0.0, 0.0);
        for (k, &p) in probs.iter().enumerate() {
            let g = gt.bits()[k];
            o_bce += if g { -(p.max(1e-12)).ln() } else { -((1.0 - p).max(1e-12)).ln() };
            ps += p;
            if g {
                gs += 1.0;
                inter += p;
            }
        }
        o_bce /= n;
        let o_dice = 1.0 - (2.0 * inter + 1e-6) / (ps + gs + 1e-6);
        let o_ce = if len == 0 {
            0.0
        } else {
            dists.iter().zip(&toks).map(|(d, &t)| -(d[t].max(1e-12)).ln()).sum::<f64>() / len as f64
        };
        let got = stage1_loss(&probs, &gt, &dists, &toks, &w).map_err(|e| e.to_string())?;
        let o_total = 0.4 * o_bce + 0.2 * o_dice + 1.0 * o_ce;
        worst = worst
            .max((got.bce - o_bce).abs())
            .max((got.dice - o_dice).abs())
            .max((got.ce - o_ce).abs())
            .max((got.total - o_total).abs());
        ensure!(dice_loss(&probs, &gt).map_err(|e| e.to_string())? == got.dice, "dice term mismatch");
        let p = r.unit();
        let label = if r.below(2) == 0 { Label::Real } else { Label::Fake };
        let o_s2 = -(if label == Label::Real { p } else { 1.0 - p }).max(1e-12).ln();
        worst = worst.max((stage2_loss([p, 1.0 - p], label).map_err(|e| e.to_string())? - o_s2).abs());
    }
    ensure!(worst <= 1e-12, "max deviation from scalar oracle {worst:e}");
    Ok(format!("perfect = 0, uniform = ln 2, 100 random instances within {worst:e}"))
}

fn forgeline(out: &Path, args: &[&str]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_forgeline"));
    cmd.arg("--out").arg(out).args(args).env_remove("FORGELINE_BACKENDS");
    for role in ["ANALYZER", "GENERATOR", "INPAINTER", "REVISER", "CAPTIONER", "EMBEDDER", "SCORER"] {
        cmd.env_remove(format!("FORGELINE_{role}_URL"));
    }
    cmd.output().expect("binary runs")
}

// 10. End to end through the binary with the all-mock suite.
fn cli_end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let out = forgeline(&data, &["dataset", "fixtures", "--n", "10", "--corruptions"]);
    ensure!(out.status.code() == Some(0), "fixtures: {}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.jsonl");
    let manifest_s = manifest.to_str().unwrap();

    let mut logs = 0;
    for (kind, schema_name) in [("inpaint", "run_log_inpaint.schema.json"), ("regen", "run_log_regen.schema.json")] {
        let dir = tmp.path().join(kind);
        let o = forgeline(&dir, &["refine", kind, "--manifest", manifest_s]);
        ensure!(o.status.code() == Some(0), "refine {kind} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
        let s = schema(schema_name);
        let runs = std::fs::read_dir(dir.join(kind)).map_err(|e| e.to_string())?;
        let mut n = 0;
        for run in runs {
            let path = run.map_err(|e| e.to_string())?.path().join("run_log.json");
            let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let errs = schema_errors(&s, &v);
            ensure!(errs.is_empty(), "{}: {errs:?}", path.display());
            ensure!(v["status"] == serde_json::json!(RunStatus::Completed), "{}: not completed", path.display());
            n += 1;
        }
        ensure!(n == 10, "refine {kind} wrote {n} run logs");
        logs += n;
    }

    let expected: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(data.join("corruptions.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(!expected.is_empty(), "no corruption fixtures");
    for (file, violation) in &expected {
        let path = data.join(file);
        let o = forgeline(&tmp.path().join("validate"), &["dataset", "validate", "--manifest", path.to_str().unwrap()]);
        let stderr = String::from_utf8_lossy(&o.stderr);
        ensure!(o.status.code() == Some(1), "{file}: exit {:?}", o.status.code());
        ensure!(stderr.contains(violation.as_str()), "{file}: `{violation}` not named in: {stderr}");
    }
    let o = forgeline(&tmp.path().join("validate"), &["dataset", "validate", "--manifest", manifest_s]);
    ensure!(o.status.code() == Some(0), "clean manifest rejected");
    Ok(format!(
        "{logs} run logs valid; {} corrupted manifests exit 1 naming the violation",
        expected.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "segmentation metrics match counting oracle", metric_oracle),
        (2, "ROUGE-L matches DP oracle", rouge_oracle),
        (3, "RLE roundtrip and rasterization oracle", rle_and_raster),
        (4, "compositing invariants", compositing),
        (5, "oracle inpainting converges", convergence),
        (6, "regeneration bookkeeping and determinism", bookkeeping),
        (7, "growth-rate arithmetic", growth),
        (8, "perturbation determinism and grid", perturbations),
        (9, "stage-1 and stage-2 losses", losses),
        (10, "CLI end to end", cli_end_to_end),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, f) in criteria {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS criterion {n}: {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {detail}");
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
