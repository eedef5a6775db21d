use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mosbench::config::{ModelSpec, RunConfig, TrainingOverrides};
use mosbench::data_model::{load_manifest, Split};
use mosbench::evaluation::{Level, Subset};
use mosbench::features::{MelConfig, MelFrontend, PatchCache};
use mosbench::models::checkpoint::load_checkpoint;
use mosbench::models::{Architecture, ProviderRegistry};
use mosbench::pipeline::{self, DataNeeds, Layout, MatrixOptions};
use mosbench::synth::{generate_corpus, generate_unlabeled, SynthConfig};
use mosbench::{Error, Result};

/// Benchmark for non-intrusive MOS predictors of synthesized speech.
#[derive(Parser, Debug)]
#[command(name = "mosbench", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding `seeds` in the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Evaluation level (both when omitted).
    #[arg(long, global = true)]
    level: Option<LevelArg>,
    /// Utterance subset: tts, vc, all, or `+`-joined system types.
    #[arg(long, global = true, default_value = "all")]
    subset: String,
    /// Feature-extraction threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Skip the on-disk mel patch cache.
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    Utterance,
    System,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every (model, seed) run of the config and predict the test split.
    Train {
        /// Restrict to these model ids.
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Pretrain the framewise CNN as an autoencoder on the unlabeled manifest.
    PretrainAe {
        /// Retrain even if a matching encoder exists.
        #[arg(long)]
        force: bool,
    },
    /// Predict MOS for a manifest with a saved checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Split to score (all rows when omitted).
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "model")]
        model_id: String,
        #[arg(long, default_value_t = 0)]
        run_id: u64,
    },
    /// Compute MSE/LCC/SRCC with 95% CIs over runs.
    Evaluate {
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Evaluate, then run ANOVA and Tukey HSD across models.
    Compare {
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Histograms, percentile bins, system-type breakdown and worst-system audit.
    Analyze {
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Write a markdown summary of the evaluation and comparison documents.
    Report,
    /// Generate a synthetic labeled corpus and a matching desk-scale config.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 600)]
        utterances: usize,
        #[arg(long, default_value_t = 12)]
        systems: usize,
        #[arg(long, default_value_t = 0.2)]
        duration: f64,
        /// Unlabeled utterances for autoencoder pretraining (0 disables).
        #[arg(long, default_value_t = 0)]
        unlabeled: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seeds) = &g.seed_list {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn levels(g: &Global) -> Vec<Level> {
    match g.level {
        None => Level::BOTH.to_vec(),
        Some(LevelArg::Utterance) => vec![Level::Utterance],
        Some(LevelArg::System) => vec![Level::System],
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print(value: serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(&value).expect("json")));
}

fn synth_config(unlabeled: bool) -> RunConfig {
    let mut datasets = BTreeMap::new();
    datasets.insert("synthetic".to_string(), PathBuf::from("synthetic.csv"));
    let mut cfg = RunConfig::benchmark(datasets, unlabeled.then(|| PathBuf::from("unlabeled.csv")));
    cfg.seeds = vec![0, 1, 2];
    cfg.evaluation.test_set = "synthetic".into();
    cfg.evaluation.validation_set = "synthetic".into();
    cfg.training = TrainingOverrides {
        patience_epochs: Some(5),
        max_epochs: Some(40),
        batch_size: Some(16),
        ..Default::default()
    };
    cfg.autoencoder.epochs = 5;
    let mut models = vec![ModelSpec::new("ConvMaxPool", Architecture::ConvMaxPool, "synthetic")];
    if unlabeled {
        models.push(ModelSpec { pretrained_trunk: true, ..ModelSpec::new("ConvMaxPool*", Architecture::ConvMaxPool, "synthetic") });
    }
    models.push(ModelSpec {
        training: TrainingOverrides { optimizer: Some(mosbench::training::OptimizerKind::Adam), ..Default::default() },
        ..ModelSpec::new("w2v_synthetic", Architecture::W2vMos, "synthetic")
    });
    cfg.models = models;
    cfg
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let registry = ProviderRegistry::new();
    match &cli.command {
        Command::Train { models } => {
            let cfg = load_config(g)?;
            let opts = MatrixOptions { models: models.clone(), workers: g.workers, use_cache: !g.no_cache };
            let report = pipeline::run_matrix(&cfg, &registry, &opts)?;
            let runs: Vec<_> = report
                .runs
                .iter()
                .map(|r| {
                    json!({
                        "model_id": r.model_id,
                        "seed": r.seed,
                        "epochs_run": r.record.epochs_run(),
                        "best_epoch": r.record.best_epoch,
                        "best_val_loss": r.record.best_val_loss,
                        "stop_reason": r.record.stop_reason,
                    })
                })
                .collect();
            print(json!({ "schema_version": 1, "runs": runs, "failures": report.failures }));
            if report.runs.is_empty() && !report.failures.is_empty() {
                return Err(Error::Config(format!("all {} runs failed", report.failures.len())));
            }
        }
        Command::PretrainAe { force } => {
            let cfg = load_config(g)?;
            let layout = Layout::new(&cfg.output_dir);
            let frontend = MelFrontend::new(cfg.features.clone())?;
            let mut cnns: Vec<_> = cfg.models.iter().filter(|m| m.pretrained_trunk).map(|m| m.model_config().cnn).collect();
            if cnns.is_empty() {
                cnns.push(mosbench::models::FramewiseCnnConfig::reference());
            }
            let mut unique = Vec::new();
            for c in cnns {
                if !unique.contains(&c) {
                    unique.push(c);
                }
            }
            let cnns = unique;
            let mut out = Vec::new();
            for cnn in cnns {
                let (doc, _) = pipeline::pretrain_ae(&cfg, &layout, &cnn, &frontend, g.workers, *force)?;
                out.push(json!({
                    "dir": layout.ae_dir(&cnn),
                    "unlabeled_utterances": doc.unlabeled_utterances,
                    "losses": doc.losses,
                }));
            }
            print(json!({ "schema_version": 1, "encoders": out }));
        }
        Command::Predict { checkpoint, manifest, split, output, model_id, run_id } => {
            let mel = match &g.config {
                Some(_) => load_config(g)?.features,
                None => MelConfig::default(),
            };
            let (model, _) = load_checkpoint(checkpoint, &registry, None)?;
            let mut m = load_manifest(manifest)?;
            if let Some(s) = split {
                let s: Split = s.to_ascii_uppercase().parse().map_err(Error::InvalidArgument)?;
                m = m.split(s)?;
            }
            let frontend = MelFrontend::new(mel)?;
            let arch = model.architecture();
            let needs = DataNeeds { patches: arch.needs_patches(), audio: arch.needs_audio() };
            let cache = match (&g.out, g.no_cache) {
                (Some(out), false) => Some(PatchCache::new(Layout::new(out).cache())?),
                _ => None,
            };
            let samples = pipeline::prepare_samples(&m, needs, &frontend, cache.as_ref(), g.workers)?;
            let preds = pipeline::predict_samples(&model, &samples, model_id, *run_id)?;
            preds.write_csv(output)?;
            print(json!({ "schema_version": 1, "output": output, "predictions": preds.predictions.len() }));
        }
        Command::Evaluate { models } => {
            let cfg = load_config(g)?;
            let subset: Subset = g.subset.parse()?;
            let bundle = pipeline::evaluate_models(&cfg, models, &levels(g), &subset)?;
            emit(&mosbench::evaluation::render_results_table(&bundle.reports));
            for r in &bundle.reports {
                for w in &r.warnings {
                    eprintln!("warning: {}: {w}", r.model_id);
                }
            }
            for s in &bundle.skipped {
                eprintln!("warning: {s}: no runs found");
            }
        }
        Command::Compare { models } => {
            let cfg = load_config(g)?;
            let subset: Subset = g.subset.parse()?;
            let bundle = pipeline::evaluate_models(&cfg, models, &levels(g), &subset)?;
            let report = pipeline::compare(&cfg, &bundle)?;
            emit(&report.render(false));
        }
        Command::Analyze { models } => {
            let cfg = load_config(g)?;
            let subset: Subset = g.subset.parse()?;
            let index = pipeline::analyze(&cfg, models, &subset)?;
            for w in &index.warnings {
                eprintln!("warning: {w}");
            }
            print(json!({ "schema_version": 1, "files": index.files }));
        }
        Command::Report => {
            let cfg = load_config(g)?;
            let subset: Subset = g.subset.parse()?;
            let path = pipeline::report(&cfg, &subset)?;
            print(json!({ "schema_version": 1, "report": path }));
        }
        Command::Synth { dir, utterances, systems, duration, unlabeled, seed } => {
            let sc = SynthConfig {
                utterances: *utterances,
                systems: *systems,
                duration_secs: *duration,
                seed: *seed,
                ..Default::default()
            };
            let (manifest, path) = generate_corpus(dir, &sc)?;
            if *unlabeled > 0 {
                generate_unlabeled(dir, *unlabeled, *duration, seed.wrapping_add(1))?;
            }
            let cfg = synth_config(*unlabeled > 0);
            let config_path = dir.join("mosbench.toml");
            std::fs::write(&config_path, cfg.to_toml_string()?)
                .map_err(|e| Error::Config(format!("writing {}: {e}", config_path.display())))?;
            print(json!({
                "schema_version": 1,
                "manifest": path,
                "utterances": manifest.len(),
                "config": config_path,
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut doc = json!({
                "schema_version": 1,
                "error": e.kind(),
                "message": e.to_string(),
            });
            if let Error::MissingPath(p) = &e {
                doc["path"] = json!(p);
            }
            eprintln!("{}", serde_json::to_string(&doc).expect("json"));
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
