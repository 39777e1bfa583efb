// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment stages and the four-setting run.
//!
//! Every command-line subcommand is a thin wrapper over a function here.
//! Artifacts are plain JSON, JSON Lines and CSV; nothing written outside the
//! manifest depends on wall-clock time or absolute paths, so identical
//! inputs give byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comments::{strip_concept, ConceptKind};
use crate::dataset::{build_pairs, sample_size, ExamplePair, SplitSpec};
use crate::error::{Error, Result};
use crate::io::{
    file_sha256, read_json, read_jsonl, sha256_hex, write_atomic, write_json, write_jsonl,
};
use crate::metrics::{self, Metric, MetricReport};
use crate::probes::{
    accuracy_curve, accuracy_tables, dynamic_threshold, load_concept_probes, save_probe,
    train_layer_probe, AccuracyCurve, LayerPairs, Probe, TrainOptions,
};
use crate::profiler::{activation_profile, build_grid, builtin_tasks, render, ActivationProfile};
use crate::steering::{SteeringDirection, SteeringPlan, SteeringScope};
use crate::tinylm::{load_model, Model, ModelConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Instruction used when a prompt record does not carry one.
pub const DEFAULT_INSTRUCTION: &str = "Complete the following code snippet.";

/// Confidence level and margin of error for default test-set sizing.
pub const SAMPLE_CONFIDENCE: f64 = 0.95;
pub const SAMPLE_MARGIN: f64 = 0.05;

fn default_instruction() -> String {
    DEFAULT_INSTRUCTION.to_owned()
}

/// A code snippet to generate from, with an optional reference output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    #[serde(default = "default_instruction")]
    pub instruction: String,
    #[serde(default)]
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl PromptRecord {
    pub fn prompt(&self) -> String {
        render(&self.instruction, &self.code)
    }

    pub fn stripped(&self, concept: ConceptKind) -> PromptRecord {
        PromptRecord {
            code: strip_concept(&self.code, concept),
            ..self.clone()
        }
    }
}

/// One model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    #[serde(default)]
    pub setting: String,
    #[serde(default)]
    pub prompt: String,
    pub output: String,
}

/// Per-layer last-token states of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    /// `true` for the concept-bearing text of a pair.
    pub label: bool,
    /// `layers[l - 1]` is the state after block `l`.
    pub layers: Vec<Vec<f64>>,
}

/// Comment groups of one source, for `extract`.
pub fn extract(source: &str) -> Vec<crate::comments::ConceptGroup> {
    crate::comments::concept_groups(source)
}

/// Embed both sides of every pair, positive first.
pub fn embed_pairs(model: &Model, pairs: &[ExamplePair]) -> Result<Vec<EmbeddingRecord>> {
    let rows: Vec<Result<[EmbeddingRecord; 2]>> = pairs
        .par_iter()
        .map(|p| {
            let embed = |text: &str, label: bool| -> Result<EmbeddingRecord> {
                let trace = model.embed(text)?;
                Ok(EmbeddingRecord {
                    id: p.id.clone(),
                    label,
                    layers: trace.into_iter().map(|e| e.vector).collect(),
                })
            };
            Ok([embed(&p.positive, true)?, embed(&p.negative, false)?])
        })
        .collect();
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Regroup embedding records into one [`LayerPairs`] per layer, ids sorted.
pub fn layer_tables(records: &[EmbeddingRecord]) -> Result<Vec<LayerPairs>> {
    let mut by_id: BTreeMap<&str, (Option<&EmbeddingRecord>, Option<&EmbeddingRecord>)> =
        BTreeMap::new();
    for r in records {
        let slot = by_id.entry(&r.id).or_default();
        let side = if r.label { &mut slot.0 } else { &mut slot.1 };
        if side.replace(r).is_some() {
            return Err(Error::Invariant(format!(
                "duplicate {} record for `{}`",
                r.label, r.id
            )));
        }
    }
    let n_layers = records
        .first()
        .map(|r| r.layers.len())
        .ok_or(Error::Empty("embeddings"))?;
    let mut tables = vec![LayerPairs::default(); n_layers];
    for (id, (pos, neg)) in by_id {
        let (Some(pos), Some(neg)) = (pos, neg) else {
            return Err(Error::Invariant(format!(
                "`{id}` lacks a positive or negative record"
            )));
        };
        for r in [pos, neg] {
            if r.layers.len() != n_layers {
                return Err(Error::DimensionMismatch {
                    expected: n_layers,
                    found: r.layers.len(),
                });
            }
        }
        for (l, table) in tables.iter_mut().enumerate() {
            table.ids.push(id.to_owned());
            table.pos.push(pos.layers[l].clone());
            table.neg.push(neg.layers[l].clone());
        }
    }
    Ok(tables)
}

/// `min(sample_size(pairs), pairs / 2)`, so that `2N` records exist.
pub fn default_test_size(pairs: usize) -> Result<usize> {
    let n = sample_size(pairs, SAMPLE_CONFIDENCE, SAMPLE_MARGIN)?.min(pairs / 2);
    if n == 0 {
        return Err(Error::InsufficientData {
            required: 2,
            available: pairs,
        });
    }
    Ok(n)
}

/// Probes at train size `N` plus the accuracy curve for every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTraining {
    pub concept: ConceptKind,
    pub test_size: usize,
    pub seed: u64,
    pub probes: Vec<Probe>,
    pub curves: Vec<AccuracyCurve>,
}

pub fn train_probes(
    records: &[EmbeddingRecord],
    concept: ConceptKind,
    test_size: Option<usize>,
    seed: u64,
) -> Result<ProbeTraining> {
    let tables = layer_tables(records)?;
    let pairs = tables.first().map(LayerPairs::len).unwrap_or(0);
    let test_size = match test_size {
        Some(n) => n,
        None => default_test_size(pairs)?,
    };
    let spec = SplitSpec::new(test_size, test_size, seed)?;
    let opts = TrainOptions::default();
    let results: Vec<Result<(Probe, AccuracyCurve)>> = tables
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let (probe, _) = train_layer_probe(concept, i + 1, data, &spec, &opts)?;
            let curve = accuracy_curve(i + 1, data, test_size, seed, &opts)?;
            Ok((probe, curve))
        })
        .collect();
    let mut probes = Vec::new();
    let mut curves = Vec::new();
    for r in results {
        let (p, c) = r?;
        probes.push(p);
        curves.push(c);
    }
    Ok(ProbeTraining {
        concept,
        test_size,
        seed,
        probes,
        curves,
    })
}

/// Probe files plus `curves.json` in `dir`; returns the written paths.
pub fn write_probe_store(dir: &Path, training: &ProbeTraining) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for p in &training.probes {
        written.push(save_probe(dir, p)?);
    }
    let curves = dir.join("curves.json");
    write_json(&curves, &training.curves)?;
    written.push(curves);
    Ok(written)
}

/// A fixed layer-qualification threshold or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Threshold {
    /// Minimum of per-store accuracy medians over every probe store found.
    #[default]
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Threshold::Auto);
        }
        let v: f64 = s.parse().map_err(|_| {
            Error::InvalidArgument(format!("threshold must be a number or `auto`, got `{s}`"))
        })?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in [0, 1], got {v}"
            )));
        }
        Ok(Threshold::Fixed(v))
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(v) => v.to_string(),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// The threshold value, scanning every probe store under `probe_root` for
/// [`Threshold::Auto`].
pub fn resolve_threshold(threshold: Threshold, probe_root: &Path) -> Result<f64> {
    match threshold {
        Threshold::Fixed(v) => Ok(v),
        Threshold::Auto => {
            let tables = accuracy_tables(probe_root)?;
            if tables.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "threshold `auto` needs at least one probe store under {}",
                    probe_root.display()
                )));
            }
            dynamic_threshold(&tables)
        }
    }
}

/// Greedy generations for `(id, prompt)` pairs under an optional plan.
pub fn generate_all(
    model: &Model,
    plan: Option<&SteeringPlan>,
    prompts: &[(String, String)],
    max_new_tokens: usize,
    setting: &str,
) -> Result<Vec<Generation>> {
    prompts
        .par_iter()
        .map(|(id, prompt)| {
            Ok(Generation {
                id: id.clone(),
                setting: setting.to_owned(),
                prompt: prompt.clone(),
                output: model.generate(prompt, max_new_tokens, plan)?,
            })
        })
        .collect()
}

/// Score generations against the references of `refs`, matched by id.
pub fn evaluate_generations(
    preds: &[Generation],
    refs: &[PromptRecord],
    metrics: &[Metric],
) -> Result<MetricReport> {
    let by_id: BTreeMap<&str, &PromptRecord> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    let items = preds
        .iter()
        .map(|g| {
            let r = by_id
                .get(g.id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("no reference for `{}`", g.id)))?;
            let reference = r.reference.clone().ok_or_else(|| {
                Error::InvalidArgument(format!("record `{}` has no reference", g.id))
            })?;
            Ok((g.id.clone(), g.output.clone(), reference))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics::evaluate(&items, metrics)
}

/// Relative deltas of one metric report against another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub treated: String,
    /// Percent change per metric; `None` where the baseline is zero.
    pub deltas: BTreeMap<Metric, Option<f64>>,
}

pub fn compare_reports(
    treated_name: &str,
    treated: &MetricReport,
    baseline_name: &str,
    baseline: &MetricReport,
) -> Comparison {
    Comparison {
        baseline: baseline_name.to_owned(),
        treated: treated_name.to_owned(),
        deltas: metrics::compare(treated, baseline),
    }
}

/// Where the run's model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    File { path: PathBuf },
    Config(ModelConfig),
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Config(ModelConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringSettings {
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default = "against_target")]
    pub target_against: f64,
    #[serde(default = "toward_target")]
    pub target_toward: f64,
    #[serde(default)]
    pub scope: SteeringScope,
}

fn against_target() -> f64 {
    SteeringDirection::Against.default_target()
}

fn toward_target() -> f64 {
    SteeringDirection::Toward.default_target()
}

impl Default for SteeringSettings {
    fn default() -> Self {
        SteeringSettings {
            threshold: Threshold::Auto,
            target_against: against_target(),
            target_toward: toward_target(),
            scope: SteeringScope::AllSteps,
        }
    }
}

fn all_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_max_new() -> usize {
    32
}

/// A four-setting experiment. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSource,
    pub concept: ConceptKind,
    /// Prompt records (JSON Lines of [`PromptRecord`], references required).
    pub records: PathBuf,
    /// Java corpus to build pairs and train probes from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Existing probe store to steer with instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_dir: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    #[serde(default)]
    pub steering: SteeringSettings,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_max_new")]
    pub max_new_tokens: usize,
    /// Also profile the record code under the built-in tasks.
    #[serde(default)]
    pub profile: bool,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Read a config file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let config: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(config.resolved(base))
    }

    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.records);
        fix(&mut self.output_dir);
        if let Some(p) = self.corpus.as_mut() {
            fix(p);
        }
        if let Some(p) = self.probe_dir.as_mut() {
            fix(p);
        }
        if let ModelSource::File { path } = &mut self.model {
            fix(path);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.corpus, &self.probe_dir) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::InvalidArgument(
                    "set exactly one of `corpus` and `probe_dir`".into(),
                ))
            }
            _ => {}
        }
        let mut paths = vec![&self.records];
        paths.extend(self.corpus.as_ref());
        paths.extend(self.probe_dir.as_ref());
        if let ModelSource::File { path } = &self.model {
            paths.push(path);
        }
        if let Some(missing) = paths.into_iter().find(|p| !p.exists()) {
            return Err(Error::io(
                missing.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
            ));
        }
        for t in [self.steering.target_against, self.steering.target_toward] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "steering target {t} outside (0, 1)"
                )));
            }
        }
        if self.metrics.is_empty() {
            return Err(Error::Empty("metric list"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Provenance of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub stages: Vec<StageRecord>,
    pub threshold: Option<f64>,
    pub qualifying_layers: Vec<usize>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.finished_at.is_some() && self.stages.iter().all(|s| s.status != StageStatus::Failed)
    }
}

/// The four generation settings, in output order.
pub const SETTINGS: [&str; 4] = ["original", "stripped", "cd_original", "ca_stripped"];

/// Relative deltas of one treated setting against the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub setting: String,
    pub metric: Metric,
    pub original: f64,
    pub value: f64,
    /// Percent; `None` when the original is zero.
    pub delta_rel: Option<f64>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Runner {
    manifest: RunManifest,
    out_dir: PathBuf,
}

impl Runner {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        match f(self) {
            Ok(v) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_owned(),
                    status: StageStatus::Ok,
                    message: None,
                });
                Ok(v)
            }
            Err(e) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_owned(),
                    status: StageStatus::Failed,
                    message: Some(e.to_string()),
                });
                Err(Error::Stage {
                    stage: name.to_owned(),
                    message: e.to_string(),
                })
            }
        }
    }

    fn skip(&mut self, name: &str) {
        self.manifest.stages.push(StageRecord {
            name: name.to_owned(),
            status: StageStatus::Skipped,
            message: None,
        });
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out_dir.join(rel), bytes)?;
        self.manifest
            .outputs
            .insert(rel.to_owned(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    fn write_jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> Result<()> {
        self.write_bytes(rel, crate::io::to_jsonl(items)?.as_bytes())
    }
}

fn hash_inputs(config: &ExperimentConfig) -> Result<BTreeMap<String, String>> {
    let mut inputs = BTreeMap::new();
    let mut add_file = |p: &Path| -> Result<()> {
        inputs.insert(p.display().to_string(), file_sha256(p)?);
        Ok(())
    };
    add_file(&config.records)?;
    if let ModelSource::File { path } = &config.model {
        add_file(path)?;
    }
    for root in config.corpus.iter().chain(&config.probe_dir) {
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::InvalidArgument(e.to_string()))?;
            if entry.file_type().is_file() {
                add_file(entry.path())?;
            }
        }
    }
    Ok(inputs)
}

/// Run the four settings (original, stripped, deactivated original,
/// activated stripped) over every record and write all artifacts plus
/// `manifest.json` into `config.output_dir`.
///
/// On failure the manifest is still written, naming the failed stage.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    let mut runner = Runner {
        manifest: RunManifest {
            tool_version: TOOL_VERSION.to_owned(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_at: now(),
            finished_at: None,
            stages: Vec::new(),
            threshold: None,
            qualifying_layers: Vec::new(),
        },
        out_dir: config.output_dir.clone(),
    };
    let result = run_stages(config, &mut runner);
    if result.is_ok() {
        runner.manifest.finished_at = Some(now());
    }
    write_json(&config.output_dir.join("manifest.json"), &runner.manifest)?;
    result.map(|()| runner.manifest)
}

fn run_stages(config: &ExperimentConfig, r: &mut Runner) -> Result<()> {
    r.stage("validate", |_| config.validate())?;
    r.manifest.inputs = r.stage("hash_inputs", |_| hash_inputs(config))?;
    let model = r.stage("load_model", |_| match &config.model {
        ModelSource::File { path } => load_model(path),
        ModelSource::Config(c) => Model::new(*c),
    })?;
    let records: Vec<PromptRecord> = r.stage("load_records", |_| {
        let recs: Vec<PromptRecord> = read_jsonl(&config.records)?;
        if recs.is_empty() {
            return Err(Error::Empty("prompt records"));
        }
        if let Some(bad) = recs.iter().find(|p| p.reference.is_none()) {
            return Err(Error::InvalidArgument(format!(
                "record `{}` has no reference",
                bad.id
            )));
        }
        Ok(recs)
    })?;

    let probe_root = match &config.corpus {
        Some(corpus) => {
            let pairs = r.stage("build_dataset", |_| {
                let set = build_pairs(corpus, config.concept)?;
                if set.pairs.is_empty() {
                    return Err(Error::Empty("concept pairs"));
                }
                Ok(set.pairs)
            })?;
            r.stage("write_dataset", |r| r.write_jsonl("pairs.jsonl", &pairs))?;
            let embeddings = r.stage("embed", |_| embed_pairs(&model, &pairs))?;
            let training = r.stage("train_probes", |_| {
                train_probes(
                    &embeddings,
                    config.concept,
                    config.test_size,
                    config.split_seed,
                )
            })?;
            r.stage("write_probes", |r| {
                for p in &training.probes {
                    let rel = format!(
                        "probes/{}",
                        crate::probes::probe_file_name(p.concept, p.layer)
                    );
                    r.write_json(&rel, p)?;
                }
                r.write_json("probes/curves.json", &training.curves)
            })?;
            r.out_dir.join("probes")
        }
        None => {
            for s in [
                "build_dataset",
                "write_dataset",
                "embed",
                "train_probes",
                "write_probes",
            ] {
                r.skip(s);
            }
            config
                .probe_dir
                .clone()
                .expect("validated: corpus or probe_dir")
        }
    };

    let probes = r.stage("load_probes", |_| {
        load_concept_probes(&probe_root, config.concept)
    })?;
    let threshold = r.stage("threshold", |_| {
        resolve_threshold(config.steering.threshold, &probe_root)
    })?;
    let against = SteeringPlan::new(
        config.concept,
        SteeringDirection::Against,
        threshold,
        probes.clone(),
    )
    .and_then(|p| p.with_target(config.steering.target_against))
    .map(|p| p.with_scope(config.steering.scope))?;
    let toward = SteeringPlan::new(config.concept, SteeringDirection::Toward, threshold, probes)
        .and_then(|p| p.with_target(config.steering.target_toward))
        .map(|p| p.with_scope(config.steering.scope))?;
    r.manifest.threshold = Some(threshold);
    r.manifest.qualifying_layers = against.qualifying_layers();

    let originals: Vec<(String, String)> =
        records.iter().map(|p| (p.id.clone(), p.prompt())).collect();
    let stripped: Vec<(String, String)> = records
        .iter()
        .map(|p| (p.id.clone(), p.stripped(config.concept).prompt()))
        .collect();
    let generations = r.stage("generate", |_| {
        let n = config.max_new_tokens;
        let mut all = Vec::with_capacity(records.len() * 4);
        all.extend(generate_all(&model, None, &originals, n, SETTINGS[0])?);
        all.extend(generate_all(&model, None, &stripped, n, SETTINGS[1])?);
        all.extend(generate_all(
            &model,
            Some(&against),
            &originals,
            n,
            SETTINGS[2],
        )?);
        all.extend(generate_all(
            &model,
            Some(&toward),
            &stripped,
            n,
            SETTINGS[3],
        )?);
        Ok(all)
    })?;
    r.stage("write_generations", |r| {
        r.write_jsonl("generations.jsonl", &generations)
    })?;

    let (reports, deltas) = r.stage("evaluate", |_| {
        let mut reports = BTreeMap::new();
        for s in SETTINGS {
            let gens: Vec<Generation> = generations
                .iter()
                .filter(|g| g.setting == s)
                .cloned()
                .collect();
            reports.insert(
                s.to_owned(),
                evaluate_generations(&gens, &records, &config.metrics)?,
            );
        }
        let base = &reports[SETTINGS[0]];
        let mut deltas = Vec::new();
        for s in &SETTINGS[1..] {
            for (&metric, &value) in &reports[*s].aggregate {
                let original = base.aggregate[&metric];
                deltas.push(DeltaRow {
                    setting: (*s).to_owned(),
                    metric,
                    original,
                    value,
                    delta_rel: metrics::relative_delta(value, original).ok(),
                });
            }
        }
        Ok((reports, deltas))
    })?;
    r.stage("write_metrics", |r| {
        r.write_json("metrics.json", &reports)?;
        r.write_json("deltas.json", &deltas)?;
        let csv = deltas_csv(&deltas)?;
        r.write_bytes("deltas.csv", csv.as_bytes())
    })?;

    if config.profile {
        let profile = r.stage("profile", |_| {
            let codes: Vec<String> = records.iter().map(|p| p.code.clone()).collect();
            let grid = build_grid(&builtin_tasks(), &codes)?;
            activation_profile(&model, &against.probes, &grid)
        })?;
        r.stage("write_profile", |r| {
            r.write_json("profile.json", &profile.cells)?;
            let csv = profile.to_csv()?;
            r.write_bytes("profile.csv", csv.as_bytes())
        })?;
    } else {
        r.skip("profile");
    }
    Ok(())
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn deltas_csv(rows: &[DeltaRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "metric", "original", "value", "delta_rel"])
        .map_err(csv_err)?;
    for d in rows {
        w.write_record([
            d.setting.clone(),
            d.metric.to_string(),
            d.original.to_string(),
            d.value.to_string(),
            d.delta_rel.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Artifacts of one completed run, as read back by [`report`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub name: String,
    pub manifest: RunManifest,
    pub deltas: Vec<DeltaRow>,
    pub reports: BTreeMap<String, MetricReport>,
    pub curves: Vec<AccuracyCurve>,
    pub probes: Vec<Probe>,
    pub profile: Option<BTreeMap<String, BTreeMap<usize, crate::profiler::CellStats>>>,
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::io(
            manifest_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing manifest"),
        ));
    }
    let manifest: RunManifest = read_json(&manifest_path)?;
    if !manifest.succeeded() {
        return Err(Error::InvalidArgument(format!(
            "run in {} did not complete",
            dir.display()
        )));
    }
    let probe_dir = manifest
        .config
        .probe_dir
        .clone()
        .unwrap_or_else(|| dir.join("probes"));
    let probes = crate::probes::load_probes(&probe_dir)?;
    Ok(RunArtifacts {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        deltas: read_json(&dir.join("deltas.json"))?,
        reports: read_json(&dir.join("metrics.json"))?,
        curves: read_optional(&probe_dir.join("curves.json"))?.unwrap_or_default(),
        probes,
        profile: read_optional(&dir.join("profile.json"))?,
        manifest,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}"))
        .unwrap_or_else(|| "n/a".to_owned())
}

/// Markdown and long-format CSV comparing the given runs side by side.
pub fn render_report(runs: &[RunArtifacts]) -> Result<(String, String)> {
    if runs.is_empty() {
        return Err(Error::Empty("run list"));
    }
    let mut md = String::from("# Experiment report\n\n");
    let mut rows: Vec<[String; 5]> = Vec::new();
    let header = |md: &mut String, first: &[&str]| {
        let cols: Vec<String> = first
            .iter()
            .map(|s| s.to_string())
            .chain(runs.iter().map(|r| r.name.clone()))
            .collect();
        let _ = writeln!(md, "| {} |", cols.join(" | "));
        let _ = writeln!(md, "|{}", "---|".repeat(cols.len()));
    };

    md.push_str(
        "## Runs\n\n| run | concept | threshold | qualifying layers |\n|---|---|---|---|\n",
    );
    for r in runs {
        let layers: Vec<String> = r
            .manifest
            .qualifying_layers
            .iter()
            .map(usize::to_string)
            .collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            r.name,
            r.manifest.config.concept,
            fmt_opt(r.manifest.threshold),
            layers.join(", ")
        );
    }

    md.push_str("\n## Probe accuracy by layer\n\n");
    header(&mut md, &["layer"]);
    let max_layer = runs
        .iter()
        .flat_map(|r| r.probes.iter().map(|p| p.layer))
        .max()
        .unwrap_or(0);
    for layer in 1..=max_layer {
        let vals: Vec<Option<f64>> = runs
            .iter()
            .map(|r| {
                r.probes
                    .iter()
                    .find(|p| p.layer == layer)
                    .map(|p| p.test_accuracy)
            })
            .collect();
        let cells: Vec<String> = vals.iter().map(|v| fmt_opt(*v)).collect();
        let _ = writeln!(md, "| {layer} | {} |", cells.join(" | "));
        for (r, v) in runs.iter().zip(&vals) {
            if let Some(v) = v {
                rows.push([
                    r.name.clone(),
                    "probe_accuracy".into(),
                    layer.to_string(),
                    String::new(),
                    v.to_string(),
                ]);
            }
        }
    }

    md.push_str("\n## Accuracy by training size\n\n");
    for r in runs {
        let Some(first) = r.curves.first() else {
            continue;
        };
        let sizes: Vec<String> = first
            .points
            .iter()
            .map(|p| p.train_size.to_string())
            .collect();
        let _ = writeln!(
            md,
            "### {}\n\n| layer \\ train size | {} |\n|{}",
            r.name,
            sizes.join(" | "),
            "---|".repeat(sizes.len() + 1)
        );
        for c in &r.curves {
            let accs: Vec<String> = c
                .points
                .iter()
                .map(|p| format!("{:.4}", p.test_accuracy))
                .collect();
            let _ = writeln!(md, "| {} | {} |", c.layer, accs.join(" | "));
            for p in &c.points {
                rows.push([
                    r.name.clone(),
                    "accuracy_curve".into(),
                    c.layer.to_string(),
                    p.train_size.to_string(),
                    p.test_accuracy.to_string(),
                ]);
            }
        }
        md.push('\n');
    }

    md.push_str("## Metrics by setting\n\n");
    header(&mut md, &["setting", "metric"]);
    for s in SETTINGS {
        for m in Metric::ALL {
            let vals: Vec<Option<f64>> = runs
                .iter()
                .map(|r| {
                    r.reports
                        .get(s)
                        .and_then(|rep| rep.aggregate.get(&m).copied())
                })
                .collect();
            if vals.iter().all(Option::is_none) {
                continue;
            }
            let cells: Vec<String> = vals.iter().map(|v| fmt_opt(*v)).collect();
            let _ = writeln!(md, "| {s} | {m} | {} |", cells.join(" | "));
            for (r, v) in runs.iter().zip(&vals) {
                if let Some(v) = v {
                    rows.push([
                        r.name.clone(),
                        "metric".into(),
                        s.to_owned(),
                        m.to_string(),
                        v.to_string(),
                    ]);
                }
            }
        }
    }

    md.push_str("\n## Relative change against the original setting (%)\n\n");
    header(&mut md, &["setting", "metric"]);
    for s in &SETTINGS[1..] {
        for m in Metric::ALL {
            let found: Vec<Option<&DeltaRow>> = runs
                .iter()
                .map(|r| r.deltas.iter().find(|d| d.setting == *s && d.metric == m))
                .collect();
            if found.iter().all(Option::is_none) {
                continue;
            }
            let cells: Vec<String> = found
                .iter()
                .map(|d| fmt_opt(d.and_then(|d| d.delta_rel)))
                .collect();
            let _ = writeln!(md, "| {s} | {m} | {} |", cells.join(" | "));
            for (r, d) in runs.iter().zip(&found) {
                if let Some(d) = d {
                    rows.push([
                        r.name.clone(),
                        "delta_rel".into(),
                        (*s).to_owned(),
                        m.to_string(),
                        d.delta_rel.map(|v| v.to_string()).unwrap_or_default(),
                    ]);
                }
            }
        }
    }

    if runs.iter().any(|r| r.profile.is_some()) {
        md.push_str("\n## Mean concept activation by task\n\n");
        header(&mut md, &["task", "layer"]);
        let mut keys: Vec<(String, usize)> = runs
            .iter()
            .filter_map(|r| r.profile.as_ref())
            .flat_map(|p| {
                p.iter()
                    .flat_map(|(t, ls)| ls.keys().map(move |l| (t.clone(), *l)))
            })
            .collect();
        keys.sort();
        keys.dedup();
        for (task, layer) in keys {
            let vals: Vec<Option<f64>> = runs
                .iter()
                .map(|r| {
                    r.profile
                        .as_ref()
                        .and_then(|p| p.get(&task))
                        .and_then(|ls| ls.get(&layer))
                        .map(|c| c.mean)
                })
                .collect();
            let cells: Vec<String> = vals.iter().map(|v| fmt_opt(*v)).collect();
            let _ = writeln!(md, "| {task} | {layer} | {} |", cells.join(" | "));
            for (r, v) in runs.iter().zip(&vals) {
                if let Some(v) = v {
                    rows.push([
                        r.name.clone(),
                        "activation".into(),
                        task.clone(),
                        layer.to_string(),
                        v.to_string(),
                    ]);
                }
            }
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "section", "key", "subkey", "value"])
        .map_err(csv_err)?;
    for row in &rows {
        w.write_record(row).map_err(csv_err)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(csv_err)?).expect("csv output is UTF-8");
    Ok((md, csv))
}

/// Write `report.md` and `report.csv` for `run_dirs` into `out_dir`.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if run_dirs.is_empty() {
        return Err(Error::Empty("run list"));
    }
    let runs = run_dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    let (md, csv) = render_report(&runs)?;
    let md_path = out_dir.join("report.md");
    let csv_path = out_dir.join("report.csv");
    write_atomic(&md_path, md.as_bytes())?;
    write_atomic(&csv_path, csv.as_bytes())?;
    Ok((md_path, csv_path))
}

/// Write an [`ActivationProfile`] as `profile.json` and a sibling CSV.
pub fn write_profile(path: &Path, profile: &ActivationProfile) -> Result<PathBuf> {
    write_json(path, &profile.cells)?;
    let csv_path = path.with_extension("csv");
    write_atomic(&csv_path, profile.to_csv()?.as_bytes())?;
    Ok(csv_path)
}

/// Write embedding records as JSON Lines.
pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Remove a stale output directory's manifest before a fresh run.
pub fn clear_manifest(dir: &Path) -> Result<()> {
    let path = dir.join("manifest.json");
    if path.exists() {
        fs::remove_file(&path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
