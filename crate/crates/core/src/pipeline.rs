//! End-to-end orchestration over a [`RunConfig`]: feature extraction,
//! autoencoder pretraining, the training matrix, prediction, evaluation,
//! comparison and analysis, with a fixed output layout:
//!
//! ```text
//! <out>/ae/<cnn-hash>/{encoder.json, encoder.bin}
//! <out>/runs/<model>/seed_<s>/{checkpoint/, run_log.json, predictions.csv | failure.json}
//! <out>/reports/   evaluation, comparison and analysis documents
//! <out>/figures/   SVG figures with CSV data
//! <out>/cache/     mel patch cache
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    default_partitions, mos_histogram, percentile_bins_by_system, system_type_breakdown, worst_systems_audit,
    write_audit, write_breakdown, write_histogram, write_percentile_bins, HistogramSpec, Normalization, SubsetMapping,
};
use crate::audio::{read_wav, Audio};
use crate::config::{ModelSpec, RunConfig};
use crate::data_model::{load_manifest, load_unlabeled_manifest, Manifest, Split, SystemType};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, render_results_table, EvalReport, Level, PredictionSet, Subset, REPORT_SCHEMA_VERSION};
use crate::features::{make_patches, MelConfig, MelFrontend, MelPatchSequence, PatchCache};
use crate::models::backbone::BACKBONE_SAMPLE_RATE;
use crate::models::checkpoint::{load_checkpoint, save_checkpoint, Provenance};
use crate::models::{FramewiseCnnConfig, Model, ModelConfig, ProviderRegistry, Sample};
use crate::nn::params::Tensor;
use crate::nn::ParamSet;
use crate::stats::{compare_models, ComparisonReport};
use crate::training::{pretrain_autoencoder, train, AePretrainConfig, LabeledSample, RunRecord, TrainConfig};

pub const PIPELINE_SCHEMA_VERSION: u32 = 1;

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

/// Directory-safe form of a model id (`ConvMaxPool*` → `ConvMaxPool_star`).
pub fn dir_name(model_id: &str) -> String {
    crate::analysis::safe_name(model_id)
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_dir(&self, model_id: &str, seed: u64) -> PathBuf {
        self.root.join("runs").join(dir_name(model_id)).join(format!("seed_{seed}"))
    }

    pub fn checkpoint_dir(&self, model_id: &str, seed: u64) -> PathBuf {
        self.run_dir(model_id, seed).join("checkpoint")
    }

    pub fn run_log(&self, model_id: &str, seed: u64) -> PathBuf {
        self.run_dir(model_id, seed).join("run_log.json")
    }

    pub fn predictions(&self, model_id: &str, seed: u64) -> PathBuf {
        self.run_dir(model_id, seed).join("predictions.csv")
    }

    pub fn failure(&self, model_id: &str, seed: u64) -> PathBuf {
        self.run_dir(model_id, seed).join("failure.json")
    }

    pub fn ae_dir(&self, cnn: &FramewiseCnnConfig) -> PathBuf {
        let hash = hex::encode(Sha256::digest(serde_json::to_vec(cnn).expect("config serializes")));
        self.root.join("ae").join(&hash[..16])
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Which inputs the models of a run need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DataNeeds {
    pub patches: bool,
    pub audio: bool,
}

impl DataNeeds {
    pub fn for_models<'a>(specs: impl IntoIterator<Item = &'a ModelSpec>) -> Self {
        specs.into_iter().fold(Self::default(), |n, s| Self {
            patches: n.patches || s.architecture.needs_patches(),
            audio: n.audio || s.architecture.needs_audio(),
        })
    }
}

fn at_rate(audio: &Audio, rate: u32) -> Result<Audio> {
    if audio.sample_rate == rate {
        Ok(audio.clone())
    } else {
        audio.resampled(rate)
    }
}

fn load_sample(
    id: &str,
    path: &Path,
    needs: DataNeeds,
    frontend: &MelFrontend,
    cache: Option<&PatchCache>,
) -> Result<Sample> {
    let raw = read_wav(path)?;
    let patches = if needs.patches {
        let audio = at_rate(&raw, frontend.config().sample_rate_hz)?;
        Some(match cache {
            Some(c) => c.patches(frontend, id, &audio)?,
            None => make_patches(id, &frontend.compute(&audio)?, frontend.config())?,
        })
    } else {
        None
    };
    let audio = if needs.audio { Some(at_rate(&raw, BACKBONE_SAMPLE_RATE)?) } else { None };
    Ok(Sample { utterance_id: id.to_string(), patches, audio })
}

/// Reads and featurizes `items` (id, path) using up to `workers` threads;
/// output order follows input order.
pub fn load_samples(
    items: &[(String, PathBuf)],
    needs: DataNeeds,
    frontend: &MelFrontend,
    cache: Option<&PatchCache>,
    workers: usize,
) -> Result<Vec<Sample>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(|(id, p)| load_sample(id, p, needs, frontend, cache)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter().map(|(id, p)| load_sample(id, p, needs, frontend, cache)).collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::Config("feature worker panicked".into()))??);
        }
        Ok(out)
    })
}

pub fn prepare_samples(
    manifest: &Manifest,
    needs: DataNeeds,
    frontend: &MelFrontend,
    cache: Option<&PatchCache>,
    workers: usize,
) -> Result<Vec<LabeledSample>> {
    let items: Vec<(String, PathBuf)> =
        manifest.utterances.iter().map(|u| (u.utterance_id.clone(), u.audio_path.clone())).collect();
    let samples = load_samples(&items, needs, frontend, cache, workers)?;
    Ok(samples
        .into_iter()
        .zip(&manifest.utterances)
        .map(|(sample, u)| LabeledSample { sample, mos: u.mos })
        .collect())
}

/// Lazily loaded manifests and featurized splits for one config.
pub struct DataStore<'a> {
    cfg: &'a RunConfig,
    frontend: MelFrontend,
    cache: Option<PatchCache>,
    needs: DataNeeds,
    workers: usize,
    manifests: BTreeMap<String, Manifest>,
    samples: BTreeMap<(String, Split), Arc<Vec<LabeledSample>>>,
}

impl<'a> DataStore<'a> {
    pub fn new(cfg: &'a RunConfig, layout: &Layout, workers: usize, use_cache: bool) -> Result<Self> {
        Ok(Self {
            cfg,
            frontend: MelFrontend::new(cfg.features.clone())?,
            cache: if use_cache { Some(PatchCache::new(layout.cache())?) } else { None },
            needs: DataNeeds::for_models(&cfg.models),
            workers,
            manifests: BTreeMap::new(),
            samples: BTreeMap::new(),
        })
    }

    pub fn with_needs(mut self, needs: DataNeeds) -> Self {
        self.needs = needs;
        self
    }

    pub fn frontend(&self) -> &MelFrontend {
        &self.frontend
    }

    /// The named dataset, renamed to its config key.
    pub fn manifest(&mut self, name: &str) -> Result<&Manifest> {
        if !self.manifests.contains_key(name) {
            let mut m = load_manifest(self.cfg.dataset_path(name)?)?;
            m.name = name.to_string();
            self.manifests.insert(name.to_string(), m);
        }
        Ok(&self.manifests[name])
    }

    pub fn split_manifest(&mut self, name: &str, split: Split) -> Result<Manifest> {
        let mut m = self.manifest(name)?.split(split)?;
        m.name = name.to_string();
        Ok(m)
    }

    pub fn samples(&mut self, name: &str, split: Split) -> Result<Arc<Vec<LabeledSample>>> {
        let key = (name.to_string(), split);
        if let Some(s) = self.samples.get(&key) {
            return Ok(s.clone());
        }
        let m = self.split_manifest(name, split)?;
        let s = Arc::new(prepare_samples(&m, self.needs, &self.frontend, self.cache.as_ref(), self.workers)?);
        self.samples.insert(key, s.clone());
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDocument {
    pub schema_version: u32,
    pub cnn: FramewiseCnnConfig,
    pub autoencoder: AePretrainConfig,
    pub mel: MelConfig,
    pub unlabeled_utterances: usize,
    pub losses: Vec<f64>,
    pub tensors: Vec<(String, Vec<usize>)>,
}

const ENCODER_JSON: &str = "encoder.json";
const ENCODER_BIN: &str = "encoder.bin";

pub fn save_encoder(dir: &Path, doc: &EncoderDocument, encoder: &ParamSet) -> Result<()> {
    let mut bytes = Vec::new();
    for t in encoder.tensors() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_json(&dir.join(ENCODER_JSON), doc)?;
    let bin = dir.join(ENCODER_BIN);
    fs::write(&bin, bytes).map_err(|e| Error::io(format!("writing {}", bin.display()), e))
}

pub fn load_encoder(dir: &Path) -> Result<(EncoderDocument, ParamSet)> {
    let doc: EncoderDocument = read_json(&dir.join(ENCODER_JSON))?;
    let bin = dir.join(ENCODER_BIN);
    let bytes = fs::read(&bin).map_err(|e| Error::io(format!("reading {}", bin.display()), e))?;
    let total: usize = doc.tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(Error::shape("encoder weights", total * 8, bytes.len()));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut params = ParamSet::new();
    for (name, shape) in &doc.tensors {
        let n = shape.iter().product();
        params.add(name.clone(), shape, values.by_ref().take(n).collect());
    }
    Ok((doc, params))
}

/// Pretrains (or reloads) the autoencoder trunk for `cnn`.
pub fn pretrain_ae(
    cfg: &RunConfig,
    layout: &Layout,
    cnn: &FramewiseCnnConfig,
    frontend: &MelFrontend,
    workers: usize,
    force: bool,
) -> Result<(EncoderDocument, ParamSet)> {
    let dir = layout.ae_dir(cnn);
    if !force {
        if let Ok((doc, params)) = load_encoder(&dir) {
            if &doc.cnn == cnn && doc.autoencoder == cfg.autoencoder && doc.mel == cfg.features {
                return Ok((doc, params));
            }
        }
    }
    let path = cfg.unlabeled.as_ref().ok_or_else(|| Error::Config("no `unlabeled` manifest configured".into()))?;
    let unlabeled = load_unlabeled_manifest(path)?;
    let items: Vec<(String, PathBuf)> = unlabeled
        .audio_paths
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("unlabeled_{i}"), p.clone()))
        .collect();
    let needs = DataNeeds { patches: true, audio: false };
    let samples = load_samples(&items, needs, frontend, None, workers)?;
    let patches: Vec<MelPatchSequence> = samples.into_iter().filter_map(|s| s.patches).collect();
    let result = pretrain_autoencoder(&patches, cnn, &cfg.autoencoder)?;
    let doc = EncoderDocument {
        schema_version: PIPELINE_SCHEMA_VERSION,
        cnn: cnn.clone(),
        autoencoder: cfg.autoencoder.clone(),
        mel: cfg.features.clone(),
        unlabeled_utterances: patches.len(),
        losses: result.losses,
        tensors: result.encoder.tensors().iter().map(|t: &Tensor| (t.name.clone(), t.shape.clone())).collect(),
    };
    save_encoder(&dir, &doc, &result.encoder)?;
    Ok((doc, result.encoder))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub schema_version: u32,
    pub model_id: String,
    pub architecture: String,
    pub train_set: String,
    pub validation_set: String,
    pub test_set: String,
    pub seed: u64,
    pub config_hash: String,
    pub train_config: TrainConfig,
    pub pretrained_trunk: bool,
    pub w2v_source: Option<String>,
    pub test_predictions: usize,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub schema_version: u32,
    pub model_id: String,
    pub seed: u64,
    pub error_kind: String,
    pub message: String,
}

pub fn predict_samples(model: &Model, samples: &[LabeledSample], model_id: &str, run_id: u64) -> Result<PredictionSet> {
    let mut set = PredictionSet::new(model_id, run_id);
    for s in samples {
        set.push(s.sample.utterance_id.clone(), model.predict(&s.sample)?);
    }
    Ok(set)
}

/// Builds the initial model for one run: fresh init from the seed, then the
/// pretrained trunk and the frozen w2vMOS branch where the model spec asks.
pub fn initial_model(
    cfg: &RunConfig,
    layout: &Layout,
    spec: &ModelSpec,
    seed: u64,
    registry: &ProviderRegistry,
    encoder: Option<&ParamSet>,
) -> Result<Model> {
    let mut model = Model::new(spec.model_config(), seed, registry)?;
    if spec.pretrained_trunk {
        let enc = encoder.ok_or_else(|| Error::Config(format!("`{}` needs a pretrained encoder", spec.id)))?;
        model.load_trunk(enc)?;
    }
    if let Some(src) = &spec.w2v_source {
        let src_spec = cfg.spec(src)?;
        let dir = layout.checkpoint_dir(src, seed);
        let (w2v, _) = load_checkpoint(&dir, registry, Some(&src_spec.model_config()))?;
        model.load_w2v_branch(&w2v)?;
    }
    Ok(model)
}

/// Trains one (spec, seed) run and writes its checkpoint, log and test
/// predictions.
pub fn train_run(
    cfg: &RunConfig,
    layout: &Layout,
    store: &mut DataStore<'_>,
    spec: &ModelSpec,
    seed: u64,
    registry: &ProviderRegistry,
    encoder: Option<&ParamSet>,
) -> Result<RunLog> {
    let model = initial_model(cfg, layout, spec, seed, registry, encoder)?;
    let train_set = store.samples(&spec.train_set, Split::Train)?;
    let val_set = store.samples(&cfg.evaluation.validation_set, Split::Val)?;
    let test_set = store.samples(&cfg.evaluation.test_set, Split::Test)?;
    let tc = cfg.train_config(spec, seed);
    let (model, record) = train(&spec.id, model, &train_set, &val_set, &tc)?;
    let provenance = Provenance {
        train_set: spec.train_set.clone(),
        seed,
        epochs_run: record.epochs_run(),
        best_epoch: record.best_epoch,
    };
    save_checkpoint(&model, &provenance, &layout.checkpoint_dir(&spec.id, seed))?;
    let preds = predict_samples(&model, &test_set, &spec.id, seed)?;
    preds.write_csv(&layout.predictions(&spec.id, seed))?;
    let log = RunLog {
        schema_version: PIPELINE_SCHEMA_VERSION,
        model_id: spec.id.clone(),
        architecture: spec.architecture.to_string(),
        train_set: spec.train_set.clone(),
        validation_set: cfg.evaluation.validation_set.clone(),
        test_set: cfg.evaluation.test_set.clone(),
        seed,
        config_hash: model.config.hash(),
        train_config: tc,
        pretrained_trunk: spec.pretrained_trunk,
        w2v_source: spec.w2v_source.clone(),
        test_predictions: preds.predictions.len(),
        record,
    };
    write_json(&layout.run_log(&spec.id, seed), &log)?;
    let _ = fs::remove_file(layout.failure(&spec.id, seed));
    Ok(log)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub schema_version: u32,
    pub runs: Vec<RunLog>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    /// Restrict to these model ids (all when empty).
    pub models: Vec<String>,
    pub workers: usize,
    pub use_cache: bool,
}

/// Specs in dependency order: fusion models after everything else, so their
/// w2vMOS source runs first.
pub fn ordered_specs<'c>(cfg: &'c RunConfig, only: &[String]) -> Result<Vec<&'c ModelSpec>> {
    for id in only {
        cfg.spec(id)?;
    }
    let selected: Vec<&ModelSpec> =
        cfg.models.iter().filter(|m| only.is_empty() || only.contains(&m.id)).collect();
    let (fusion, rest): (Vec<_>, Vec<_>) = selected.into_iter().partition(|m| m.architecture.is_fusion());
    Ok(rest.into_iter().chain(fusion).collect())
}

fn failure(spec: &ModelSpec, seed: u64, e: &Error) -> RunFailure {
    RunFailure {
        schema_version: PIPELINE_SCHEMA_VERSION,
        model_id: spec.id.clone(),
        seed,
        error_kind: e.kind().to_string(),
        message: e.to_string(),
    }
}

/// Trains every selected spec for every seed. A failing run is recorded in
/// `failure.json` and the matrix continues.
pub fn run_matrix(cfg: &RunConfig, registry: &ProviderRegistry, opts: &MatrixOptions) -> Result<MatrixReport> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let specs = ordered_specs(cfg, &opts.models)?;
    let mut store = DataStore::new(cfg, &layout, opts.workers, opts.use_cache)?
        .with_needs(DataNeeds::for_models(specs.iter().copied()));
    let mut encoders: BTreeMap<String, std::result::Result<ParamSet, Error>> = BTreeMap::new();
    let mut report = MatrixReport { schema_version: PIPELINE_SCHEMA_VERSION, ..Default::default() };
    for spec in specs {
        let mc: ModelConfig = spec.model_config();
        let encoder = if spec.pretrained_trunk {
            let key = serde_json::to_string(&mc.cnn)?;
            let entry = encoders.entry(key).or_insert_with(|| {
                pretrain_ae(cfg, &layout, &mc.cnn, store.frontend(), opts.workers, false).map(|(_, p)| p)
            });
            match entry {
                Ok(p) => Some(p.clone()),
                Err(e) => {
                    for &seed in &cfg.seeds {
                        let f = failure(spec, seed, e);
                        write_json(&layout.failure(&spec.id, seed), &f)?;
                        report.failures.push(f);
                    }
                    continue;
                }
            }
        } else {
            None
        };
        for &seed in &cfg.seeds {
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                train_run(cfg, &layout, &mut store, spec, seed, registry, encoder.as_ref())
            }))
            .unwrap_or_else(|_| Err(Error::Config(format!("run `{}` seed {seed} panicked", spec.id))));
            match outcome {
                Ok(log) => report.runs.push(log),
                Err(e) => {
                    let f = failure(spec, seed, &e);
                    write_json(&layout.failure(&spec.id, seed), &f)?;
                    report.failures.push(f);
                }
            }
        }
    }
    write_json(&layout.reports().join("matrix.json"), &report)?;
    Ok(report)
}

/// Prediction sets found on disk for one model, plus the seeds with none.
pub fn collect_predictions(layout: &Layout, model_id: &str, seeds: &[u64]) -> Result<(Vec<PredictionSet>, Vec<u64>)> {
    let mut sets = Vec::new();
    let mut missing = Vec::new();
    for &seed in seeds {
        let path = layout.predictions(model_id, seed);
        if !path.exists() {
            missing.push(seed);
            continue;
        }
        for mut set in crate::evaluation::read_predictions(&path)? {
            set.model_id = model_id.to_string();
            sets.push(set);
        }
    }
    Ok((sets, missing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBundle {
    pub schema_version: u32,
    pub test_set: String,
    pub subset: String,
    pub reports: Vec<EvalReport>,
    /// Models skipped because no run had predictions.
    pub skipped: Vec<String>,
}

pub fn subset_suffix(subset: &Subset) -> String {
    match subset {
        Subset::All => String::new(),
        s => format!("_{}", s.label().to_ascii_lowercase()),
    }
}

fn selected_ids(cfg: &RunConfig, only: &[String]) -> Result<Vec<String>> {
    for id in only {
        cfg.spec(id)?;
    }
    Ok(cfg.models.iter().filter(|m| only.is_empty() || only.contains(&m.id)).map(|m| m.id.clone()).collect())
}

/// Scores the stored predictions of each model on the test split and writes
/// `eval_<model>.json` plus the results table.
pub fn evaluate_models(
    cfg: &RunConfig,
    only: &[String],
    levels: &[Level],
    subset: &Subset,
) -> Result<EvaluationBundle> {
    let layout = Layout::new(&cfg.output_dir);
    let mut manifest = load_manifest(cfg.dataset_path(&cfg.evaluation.test_set)?)?.split(Split::Test)?;
    manifest.name = cfg.evaluation.test_set.clone();
    let suffix = subset_suffix(subset);
    let mut bundle = EvaluationBundle {
        schema_version: REPORT_SCHEMA_VERSION,
        test_set: cfg.evaluation.test_set.clone(),
        subset: subset.label(),
        reports: Vec::new(),
        skipped: Vec::new(),
    };
    for id in selected_ids(cfg, only)? {
        let (sets, missing) = collect_predictions(&layout, &id, &cfg.seeds)?;
        if sets.is_empty() {
            bundle.skipped.push(id);
            continue;
        }
        let mut report = evaluate(&sets, &manifest, levels, subset)?;
        if !missing.is_empty() {
            let list: Vec<String> = missing.iter().map(u64::to_string).collect();
            report.warnings.push(format!("missing runs for seeds {}", list.join(",")));
        }
        write_json(&layout.reports().join(format!("eval_{}{suffix}.json", dir_name(&id))), &report)?;
        bundle.reports.push(report);
    }
    if bundle.reports.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no prediction files under {} for the selected models",
            layout.root.join("runs").display()
        )));
    }
    write_text(&layout.reports().join(format!("results_table{suffix}.txt")), &render_results_table(&bundle.reports))?;
    write_json(&layout.reports().join(format!("evaluation{suffix}.json")), &bundle)?;
    Ok(bundle)
}

/// ANOVA and Tukey HSD over the evaluated models; writes the full and the
/// filtered comparison tables.
pub fn compare(cfg: &RunConfig, bundle: &EvaluationBundle) -> Result<ComparisonReport> {
    let layout = Layout::new(&cfg.output_dir);
    let suffix = if bundle.subset == "all" { String::new() } else { format!("_{}", bundle.subset.to_ascii_lowercase()) };
    let report = compare_models(&bundle.reports, cfg.evaluation.alpha, cfg.evaluation.anova_gate)?;
    write_json(&layout.reports().join(format!("comparison{suffix}.json")), &report)?;
    write_text(&layout.reports().join(format!("comparison{suffix}.txt")), &report.render(false))?;
    write_text(&layout.reports().join(format!("comparison_filtered{suffix}.txt")), &report.render(true))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisIndex {
    pub schema_version: u32,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Partitions of the system-type breakdown restricted to `subset`.
pub fn breakdown_partitions(subset: &Subset) -> Vec<(String, Vec<SystemType>)> {
    default_partitions()
        .into_iter()
        .filter(|(_, types)| types.iter().any(|t| subset.contains(*t)))
        .collect()
}

/// MOS histograms and percentile bins per dataset, then the system-type
/// breakdown and worst-system audit per model.
pub fn analyze(cfg: &RunConfig, only: &[String], subset: &Subset) -> Result<AnalysisIndex> {
    let layout = Layout::new(&cfg.output_dir);
    let figures = layout.figures();
    let reports = layout.reports();
    let mut index = AnalysisIndex { schema_version: REPORT_SCHEMA_VERSION, files: Vec::new(), warnings: Vec::new() };
    let hist_spec = HistogramSpec::equal_bins(16, Normalization::Proportion);
    for (name, path) in &cfg.datasets {
        let mut m = load_manifest(path)?;
        m.name = name.clone();
        let h = mos_histogram(&m, &hist_spec)?;
        index.files.extend(write_histogram(&h, &figures)?);
        match percentile_bins_by_system(&m) {
            Ok(r) => {
                let p = reports.join(format!("percentile_bins_{}.json", dir_name(name)));
                write_json(&p, &r)?;
                index.files.push(p);
                index.files.extend(write_percentile_bins(&r, &figures)?);
            }
            Err(e) => index.warnings.push(format!("{name}: {e}")),
        }
    }
    let mut test = load_manifest(cfg.dataset_path(&cfg.evaluation.test_set)?)?.split(Split::Test)?;
    test.name = cfg.evaluation.test_set.clone();
    let partitions = breakdown_partitions(subset);
    for id in selected_ids(cfg, only)? {
        let (sets, missing) = collect_predictions(&layout, &id, &cfg.seeds)?;
        if sets.is_empty() {
            index.warnings.push(format!("{id}: no predictions"));
            continue;
        }
        if !missing.is_empty() {
            index.warnings.push(format!("{id}: {} missing runs", missing.len()));
        }
        if partitions.is_empty() {
            index.warnings.push(format!("{id}: subset {} has no TTS/VC partition", subset.label()));
        } else {
            let b = system_type_breakdown(&sets, &test, &partitions, SubsetMapping::Refit)?;
            let p = reports.join(format!("breakdown_{}{}.json", dir_name(&id), subset_suffix(subset)));
            write_json(&p, &b)?;
            index.files.push(p);
            index.files.extend(write_breakdown(&b, &figures)?);
        }
        let audit = worst_systems_audit(&sets, &test, cfg.evaluation.audit_top_k)?;
        let p = reports.join(format!("audit_{}.json", dir_name(&id)));
        write_json(&p, &audit)?;
        index.files.push(p);
        index.files.extend(write_audit(&audit, &test.name, &figures)?);
    }
    write_json(&reports.join(format!("analysis{}.json", subset_suffix(subset))), &index)?;
    Ok(index)
}

/// Markdown summary of the stored evaluation and comparison documents.
pub fn report(cfg: &RunConfig, subset: &Subset) -> Result<PathBuf> {
    let layout = Layout::new(&cfg.output_dir);
    let suffix = subset_suffix(subset);
    let bundle: EvaluationBundle = read_json(&layout.reports().join(format!("evaluation{suffix}.json")))?;
    let mut md = format!("# MOS prediction benchmark\n\nTest set: `{}`, subset: `{}`\n\n", bundle.test_set, bundle.subset);
    md.push_str("## Results (mean ± 95% CI over runs)\n\n```\n");
    md.push_str(&render_results_table(&bundle.reports));
    md.push_str("```\n");
    let cmp_path = layout.reports().join(format!("comparison{suffix}.json"));
    if cmp_path.exists() {
        let cmp: ComparisonReport = read_json(&cmp_path)?;
        md.push_str(&format!(
            "\n## Pairs with at least one non-rejected null hypothesis (Tukey HSD, alpha = {})\n\n```\n",
            cmp.alpha
        ));
        md.push_str(&cmp.render(true));
        md.push_str("```\n");
    }
    let warnings: Vec<String> = bundle
        .reports
        .iter()
        .flat_map(|r| r.warnings.iter().map(move |w| format!("- {}: {w}", r.model_id)))
        .chain(bundle.skipped.iter().map(|s| format!("- {s}: no runs found")))
        .collect();
    if !warnings.is_empty() {
        md.push_str("\n## Warnings\n\n");
        md.push_str(&warnings.join("\n"));
        md.push('\n');
    }
    let path = layout.reports().join(format!("summary{suffix}.md"));
    write_text(&path, &md)?;
    Ok(path)
}
