//! Prompt revision with regeneration.
//!
//! Each round analyzes the current image, appends every reported explanation
//! to the memory bank, revises the prompt against the whole bank and
//! regenerates. The run is strictly serial.

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{image_name, shape_error, RunAbort, RunStatus, RUN_LOG_SCHEMA_VERSION};
use crate::backends::{Analyzer, AnalyzerReport, BackendError, BackendSuite, Captioner, Generator, Reviser, Role, Scorer};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub iteration: usize,
    pub explanation: String,
}

/// Append-only record of explanations seen so far.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// # Panics
    /// If `iteration` is below the last recorded one.
    pub fn push(&mut self, iteration: usize, explanation: impl Into<String>) {
        if let Some(last) = self.entries.last() {
            assert!(iteration >= last.iteration, "memory iterations must be non-decreasing");
        }
        self.entries.push(MemoryEntry {
            iteration,
            explanation: explanation.into(),
        });
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn explanations(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.explanation.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegenConfig {
    pub max_iters: usize,
    pub seed: u64,
    /// Stop as soon as the analyzer reports no regions. When false the loop
    /// always runs `max_iters` rounds.
    pub early_stop: bool,
    /// Score each image when a scorer is configured.
    pub score: bool,
    /// Caption instruction used when no initial prompt is given.
    pub caption_instruction: String,
}

pub const DEFAULT_CAPTION_INSTRUCTION: &str = "Describe this image in one concise sentence.";

impl Default for RegenConfig {
    fn default() -> Self {
        Self {
            max_iters: 2,
            seed: 0,
            early_stop: true,
            score: true,
            caption_instruction: DEFAULT_CAPTION_INSTRUCTION.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSource {
    Given,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenStep {
    pub iteration: usize,
    pub prompt: String,
    pub image_ref: String,
    /// Generation seed; absent for the starting image.
    pub seed: Option<u64>,
    pub analyzer_report: Option<AnalyzerReport>,
    pub memory_len: usize,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenRunLog {
    pub schema_version: String,
    pub kind: String,
    pub id: Option<String>,
    pub seed: u64,
    pub config: RegenConfig,
    pub prompt_source: PromptSource,
    pub iterations: Vec<RegenStep>,
    pub memory: MemoryBank,
    pub stopped_early: bool,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl RegenRunLog {
    pub fn final_prompt(&self) -> Option<&str> {
        self.iterations.last().map(|s| s.prompt.as_str())
    }

    pub fn prompts(&self) -> Vec<&str> {
        self.iterations.iter().map(|s| s.prompt.as_str()).collect()
    }
}

#[derive(Debug)]
pub struct RegenOutput {
    pub log: RegenRunLog,
    /// `(image_ref, image)` for every step, starting image first.
    pub images: Vec<(String, RgbImage)>,
}

impl RegenOutput {
    pub fn final_image(&self) -> &RgbImage {
        &self.images.last().expect("the starting image is always present").1
    }
}

pub type RegenAbort = RunAbort<RegenRunLog>;

/// One revision against the current memory. The memory is not modified.
pub fn revise_step(prompt: &str, memory: &MemoryBank, reviser: &dyn Reviser) -> Result<String, BackendError> {
    reviser.revise(prompt, &memory.explanations())
}

/// Seed passed to the generator for the image of iteration `t`.
pub fn generation_seed(seed: u64, iteration: usize) -> u64 {
    rng::keyed(seed, iteration as u64)
}

struct Roles {
    analyzer: Arc<dyn Analyzer>,
    reviser: Arc<dyn Reviser>,
    generator: Arc<dyn Generator>,
    captioner: Option<Arc<dyn Captioner>>,
    scorer: Option<Arc<dyn Scorer>>,
}

struct Run<'a> {
    log: RegenRunLog,
    images: Vec<(String, RgbImage)>,
    id: Option<&'a str>,
}

impl Run<'_> {
    fn abort(mut self, error: BackendError) -> Box<RegenAbort> {
        self.log.status = RunStatus::Aborted;
        self.log.error = Some(error.to_string());
        Box::new(RunAbort {
            log: self.log,
            images: self.images,
            error,
        })
    }
}

/// Runs the regeneration loop from `image`. A captioner is needed only when
/// `prompt` is `None`. `id` is forwarded to every backend call.
pub fn run_regeneration(
    image: &RgbImage,
    prompt: Option<&str>,
    id: Option<&str>,
    suite: &BackendSuite,
    config: &RegenConfig,
) -> Result<RegenOutput, Box<RegenAbort>> {
    let mut run = Run {
        log: RegenRunLog {
            schema_version: RUN_LOG_SCHEMA_VERSION.into(),
            kind: "regen".into(),
            id: id.map(str::to_owned),
            seed: config.seed,
            config: config.clone(),
            prompt_source: if prompt.is_some() { PromptSource::Given } else { PromptSource::Caption },
            iterations: Vec::new(),
            memory: MemoryBank::new(),
            stopped_early: false,
            status: RunStatus::Completed,
            error: None,
        },
        images: Vec::new(),
        id,
    };
    let roles = match resolve(suite, prompt.is_none(), config.score) {
        Ok(r) => r,
        Err(e) => return Err(run.abort(e)),
    };
    match drive(&mut run, &roles, image, prompt, config) {
        Ok(()) => Ok(RegenOutput {
            log: run.log,
            images: run.images,
        }),
        Err(e) => Err(run.abort(e)),
    }
}

fn resolve(suite: &BackendSuite, need_caption: bool, score: bool) -> Result<Roles, BackendError> {
    let mut required = vec![Role::Analyzer, Role::Reviser, Role::Generator];
    if need_caption {
        required.push(Role::Captioner);
    }
    suite.require(&required)?;
    Ok(Roles {
        analyzer: suite.analyzer()?,
        reviser: suite.reviser()?,
        generator: suite.generator()?,
        captioner: suite.captioner.clone(),
        scorer: if score { suite.scorer.clone() } else { None },
    })
}

fn drive(
    run: &mut Run<'_>,
    roles: &Roles,
    image: &RgbImage,
    prompt: Option<&str>,
    config: &RegenConfig,
) -> Result<(), BackendError> {
    let (w, h) = image.dimensions();
    let id = run.id;
    let first_prompt = match prompt {
        Some(p) => p.to_owned(),
        None => {
            let c = roles.captioner.as_ref().expect("captioner resolved when no prompt is given");
            c.caption(image, Some(&config.caption_instruction), id)?.trim().to_owned()
        }
    };
    let score = |img: &RgbImage, p: &str| -> Result<Option<f64>, BackendError> {
        roles.scorer.as_ref().map(|s| s.score(img, Some(p), id)).transpose()
    };
    run.log.iterations.push(RegenStep {
        iteration: 0,
        image_ref: image_name(0),
        seed: None,
        analyzer_report: None,
        memory_len: 0,
        score: score(image, &first_prompt)?,
        prompt: first_prompt,
    });
    run.images.push((image_name(0), image.clone()));

    for t in 0..config.max_iters {
        let current = &run.images[t].1;
        let report = roles.analyzer.analyze(current, id)?;
        report
            .validate(w, h)
            .map_err(|m| BackendError::protocol(Role::Analyzer, m))?;
        let n_regions = report.regions.len();
        for r in &report.regions {
            run.log.memory.push(t, r.explanation.clone());
        }
        run.log.iterations[t].analyzer_report = Some(report);
        if n_regions == 0 && config.early_stop {
            log::info!("no regions reported at iteration {t}; stopping");
            run.log.stopped_early = true;
            break;
        }

        let revised = revise_step(&run.log.iterations[t].prompt, &run.log.memory, roles.reviser.as_ref())?;
        let seed = generation_seed(config.seed, t + 1);
        let next = roles.generator.generate(&revised, w, h, seed, id)?;
        if next.dimensions() != (w, h) {
            return Err(shape_error(Role::Generator, next.dimensions(), (w, h)));
        }
        let name = image_name(t + 1);
        run.log.iterations.push(RegenStep {
            iteration: t + 1,
            image_ref: name.clone(),
            seed: Some(seed),
            analyzer_report: None,
            memory_len: run.log.memory.len(),
            score: score(&next, &revised)?,
            prompt: revised,
        });
        run.images.push((name, next));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::EchoReviser;

    #[test]
    fn revise_with_empty_memory_is_identity() {
        assert_eq!(revise_step("a cat", &MemoryBank::new(), &EchoReviser).unwrap(), "a cat");
    }

    #[test]
    fn revise_lists_memory_in_order() {
        let mut m = MemoryBank::new();
        m.push(0, "fingers are deformed");
        assert_eq!(
            revise_step("a portrait", &m, &EchoReviser).unwrap(),
            "a portrait Avoid: fingers are deformed"
        );
        m.push(0, "text is garbled");
        assert_eq!(
            revise_step("a portrait", &m, &EchoReviser).unwrap(),
            "a portrait Avoid: fingers are deformed; text is garbled"
        );
    }

    #[test]
    #[should_panic(expected = "non-decreasing")]
    fn memory_rejects_going_back() {
        let mut m = MemoryBank::new();
        m.push(2, "a");
        m.push(1, "b");
    }
}
