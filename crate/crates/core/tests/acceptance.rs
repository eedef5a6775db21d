//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use mosbench::analysis::{percentile_bins_by_system, system_type_breakdown, default_partitions, SubsetMapping};
use mosbench::config::{ModelSpec, RunConfig, TrainingOverrides};
use mosbench::data_model::{mos_bin, subsample_matched, Split, SystemType};
use mosbench::evaluation::{
    apply_mapping, fit_p1401, lcc, metrics_for_pairs, mse, srcc, Level, Metric, PredictionSet, Subset,
};
use mosbench::models::{Architecture, Model, ModelConfig, ProviderRegistry};
use mosbench::pipeline::{self, DataNeeds, MatrixOptions};
use mosbench::stats::{one_way_anova, pooled_t, tukey_hsd, MetricSamples};
use mosbench::synth::{generate_corpus, SynthConfig};
use mosbench::training::{simulate_early_stopping, train, Optimizer, OptimizerKind, StopReason, TrainConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn brute_mse(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += (x[i] - y[i]) * (x[i] - y[i]);
    }
    s / x.len() as f64
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Rank = 1 + (# strictly smaller) + (# equal others) / 2.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let eq = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

fn c1_metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_ties) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let ties = trial % 2 == 1;
        let draw = |rng: &mut ChaCha8Rng| {
            let v: f64 = rng.random_range(1.0..5.0);
            if ties {
                (v * 2.0).round() / 2.0
            } else {
                v
            }
        };
        let x: Vec<f64> = (0..100).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + draw(&mut rng)).collect();
        worst = worst.max((mse(&x, &y).unwrap() - brute_mse(&x, &y)).abs());
        worst = worst.max((lcc(&x, &y).unwrap() - brute_pearson(&x, &y)).abs());
        let s = (srcc(&x, &y).unwrap() - brute_pearson(&brute_ranks(&x), &brute_ranks(&y))).abs();
        if ties {
            worst_ties = worst_ties.max(s);
        } else {
            worst = worst.max(s);
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-10, "max deviation {worst:e}");
    ensure!(worst_ties <= 1e-6, "max SRCC deviation with ties {worst_ties:e}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("max dev {worst:.1e}, ties {worst_ties:.1e}, {:.2}s", elapsed.as_secs_f64()))
}

fn c2_p1401() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_mse, mut worst_corr) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let a: f64 = rng.random_range(-2.0..2.0);
        let b: f64 = rng.random_range(0.1..3.0);
        let pred: Vec<f64> = (0..50).map(|_| rng.random_range(1.0..5.0)).collect();
        let truth: Vec<f64> = pred.iter().map(|p| a + b * p).collect();
        let m = metrics_for_pairs(0, &pred, &truth, None).unwrap();
        worst_mse = worst_mse.max(m.mse.unwrap());
        let mapped = apply_mapping(&pred, fit_p1401(&pred, &truth).unwrap());
        worst_corr = worst_corr.max((lcc(&mapped, &truth).unwrap() - lcc(&pred, &truth).unwrap()).abs());
        worst_corr = worst_corr.max((srcc(&mapped, &truth).unwrap() - srcc(&pred, &truth).unwrap()).abs());

        let noise = Normal::new(0.0, rng.random_range(0.05..1.5)).unwrap();
        let noisy: Vec<f64> = truth.iter().map(|t| (t - a) / b + 0.3 + noise.sample(&mut rng)).collect();
        let mapped_mse = metrics_for_pairs(0, &noisy, &truth, None).unwrap().mse.unwrap();
        ensure!(mapped_mse <= mse(&noisy, &truth).unwrap() + 1e-12, "mapping raised MSE");
        let noisy_mapped = apply_mapping(&noisy, fit_p1401(&noisy, &truth).unwrap());
        worst_corr = worst_corr.max((lcc(&noisy_mapped, &truth).unwrap() - lcc(&noisy, &truth).unwrap()).abs());
        worst_corr = worst_corr.max((srcc(&noisy_mapped, &truth).unwrap() - srcc(&noisy, &truth).unwrap()).abs());
    }
    ensure!(worst_mse < 1e-20, "mapped MSE {worst_mse:e}");
    ensure!(worst_corr <= 1e-12, "correlation moved by {worst_corr:e}");
    Ok(format!("max mapped MSE {worst_mse:.1e}, max corr change {worst_corr:.1e}"))
}

fn c3_statistics() -> Outcome {
    let fixture = MetricSamples::new(
        "fixture",
        vec![("A".into(), vec![1.0, 2.0, 3.0]), ("B".into(), vec![2.0, 3.0, 4.0]), ("C".into(), vec![3.0, 4.0, 5.0])],
    );
    let anova = one_way_anova(&fixture).unwrap();
    ensure!((anova.f - 3.0).abs() <= 1e-9, "F = {}", anova.f);
    ensure!((anova.df_between, anova.df_within) == (2, 6), "df {:?}", (anova.df_between, anova.df_within));
    let tukey = tukey_hsd(&fixture, 0.05).unwrap();
    let ac = tukey.pairs.iter().find(|p| p.a == "A" && p.b == "C").unwrap();
    ensure!((ac.q - 12f64.sqrt()).abs() < 1e-9, "q(A,C) = {}", ac.q);
    // Studentized range table, k = 3, df = 6, alpha = 0.05: 4.339.
    ensure!((ac.critical_q - 4.339).abs() < 5e-4, "critical q = {}", ac.critical_q);
    ensure!(!ac.rejected, "(A,C) rejected");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut agree = 0;
    let mut rejections = 0;
    for _ in 0..200 {
        let (na, nb) = (rng.random_range(3..12), rng.random_range(3..12));
        let shift: f64 = rng.random_range(0.0..1.5);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..2.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.0..2.0) + shift).collect();
        let t = tukey_hsd(&MetricSamples::from_values(&[&a, &b]), 0.05).unwrap();
        let (tstat, df) = pooled_t(&a, &b);
        let crit = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
        let t_reject = tstat.abs() > crit;
        rejections += usize::from(t_reject);
        if t.pairs[0].rejected == t_reject {
            agree += 1;
        }
    }
    ensure!(agree == 200, "{agree}/200 decisions agree");
    Ok(format!(
        "F = {:.9}, df (2,6); q(A,C) = {:.3} < {:.3}; k=2 agrees 200/200 ({rejections} rejections)",
        anova.f, ac.q, ac.critical_q
    ))
}

fn c4_shapes() -> Outcome {
    let registry = ProviderRegistry::new();
    let cmp = Model::new(ModelConfig::reference(Architecture::ConvMaxPool), 0, &registry).unwrap();
    let cnn = &cmp.config.cnn;
    ensure!((cnn.input_height, cnn.input_width) == (48, 15), "input {}x{}", cnn.input_height, cnn.input_width);
    ensure!(cnn.output_shape() == (6, 1, 64), "output {:?}", cnn.output_shape());
    ensure!(cnn.flat_dim() == 384, "flat {}", cnn.flat_dim());
    let sample = common::random_sample(&cmp.config, 1, 0);
    let map = cmp.trunk().unwrap().forward_map(&cmp.params, &sample.patches.as_ref().unwrap().patches[0]).unwrap();
    ensure!((map.h, map.w, map.data.nrows()) == (6, 1, 64), "forward output {}x{}x{}", map.h, map.w, map.data.nrows());

    let nisqa = Model::new(ModelConfig::reference(Architecture::Nisqa), 0, &registry).unwrap();
    let (a, b) = (cmp.count_parameters().trainable, nisqa.count_parameters().trainable);
    let ratio = a as f64 / b as f64;
    ensure!((0.55..=0.70).contains(&ratio), "ratio {ratio:.3} ({a}/{b})");
    let f1 = ModelConfig::reference(Architecture::Fusion1).fusion_input_dim();
    let f2 = ModelConfig::reference(Architecture::Fusion2).fusion_input_dim();
    ensure!((f1, f2) == (65, 833), "fusion dims {f1}/{f2}");
    Ok(format!("6x1x64 -> 384; params {a}/{b} = {ratio:.3}; fusion {f1}/{f2}"))
}

fn c5_gradients() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let cfg = ModelConfig::tiny(arch);
        let model = Model::new(cfg.clone(), 11, &ProviderRegistry::new()).unwrap();
        let sample = common::random_sample(&cfg, 3, 5);
        let report = common::check_gradients(&model, &sample, 1.0, 60, 1e-4, 1e-4, 17);
        ensure!(report.checked >= 50, "{arch}: only {} coordinates", report.checked);
        ensure!(report.failures.is_empty(), "{arch}: {:?}", report.failures);
        parts.push(format!("{arch} {} (max rel {:.1e})", report.checked, report.max_rel));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("{}; {:.2}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn c6_freezing() -> Outcome {
    let mut parts = Vec::new();
    for arch in [Architecture::Fusion1, Architecture::Fusion2] {
        let cfg = ModelConfig::tiny(arch);
        let mut model = Model::new(cfg.clone(), 4, &ProviderRegistry::new()).unwrap();
        let before = model.params.clone();
        let sample = common::random_sample(&cfg, 3, 9);
        let mut grads = model.params.zero_grads();
        model.backward(&sample, &mut grads, |p| if p > 3.0 { 1.0 } else { -1.0 }).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, &model.params);
        opt.step(&mut model.params, &grads);
        let (mut frozen, mut moved) = (0, 0);
        for (i, (old, new)) in before.tensors().iter().zip(model.params.tensors()).enumerate() {
            let trainable = before.is_trainable(mosbench::nn::ParamId(i));
            ensure!(trainable != old.name.starts_with("w2v."), "{arch}: {} trainable = {trainable}", old.name);
            if trainable {
                moved += usize::from(old.data != new.data);
            } else {
                ensure!(
                    old.data.iter().zip(&new.data).all(|(a, b)| a.to_bits() == b.to_bits()),
                    "{arch}: frozen {} changed",
                    old.name
                );
                frozen += 1;
            }
        }
        ensure!(moved > 0 && frozen > 0, "{arch}: moved {moved}, frozen {frozen}");
        parts.push(format!("{arch}: {frozen} frozen tensors bit-identical, {moved} trainable updated"));
    }
    Ok(parts.join("; "))
}

fn c7_protocol() -> Outcome {
    // (sequence, expected stop epoch, expected best epoch, reason) with patience 20.
    let descending_then_flat: Vec<f64> = (0..10).map(|i| 1.0 - 0.05 * i as f64).chain(std::iter::repeat_n(0.55, 40)).collect();
    let late_improvement: Vec<f64> = (0..50).map(|i| if i == 19 { 0.1 } else { 0.5 }).collect();
    let noisy_plateau: Vec<f64> = (0..60).map(|i| if i == 0 { 1.0 } else { 1.0 + 0.01 * ((i * 7) % 5) as f64 }).collect();
    let steady: Vec<f64> = (0..100).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let scripts: Vec<(&str, &[f64], usize, usize, StopReason)> = vec![
        ("descending then flat", &descending_then_flat, 30, 10, StopReason::Patience),
        ("late improvement", &late_improvement, 40, 20, StopReason::Patience),
        ("no improvement after first", &noisy_plateau, 21, 1, StopReason::Patience),
        ("steady improvement", &steady, 100, 100, StopReason::MaxEpochs),
    ];
    for (name, seq, stop, best, reason) in scripts {
        let got = simulate_early_stopping(seq, 20, 100);
        ensure!(got == Some((stop, best, reason)), "{name}: got {got:?}, expected {:?}", (stop, best, reason));
    }

    let dir = tempfile::tempdir().unwrap();
    let (m, _) = generate_corpus(dir.path(), &SynthConfig { utterances: 72, ..Default::default() }).unwrap();
    let fe = mosbench::features::MelFrontend::new(Default::default()).unwrap();
    let needs = DataNeeds { patches: true, audio: false };
    let tr = pipeline::prepare_samples(&m.split(Split::Train).unwrap(), needs, &fe, None, 1).unwrap();
    let va = pipeline::prepare_samples(&m.split(Split::Val).unwrap(), needs, &fe, None, 1).unwrap();
    let te = pipeline::prepare_samples(&m.split(Split::Test).unwrap(), needs, &fe, None, 1).unwrap();
    let csv = |seed: u64| {
        let model = Model::new(ModelConfig::tiny(Architecture::ConvMaxPool), seed, &ProviderRegistry::new()).unwrap();
        let cfg = TrainConfig { max_epochs: 4, batch_size: 8, ..TrainConfig::for_architecture(Architecture::ConvMaxPool, seed) };
        let (model, _) = train("cmp", model, &tr, &va, &cfg).unwrap();
        pipeline::predict_samples(&model, &te, "cmp", seed).unwrap().to_csv_string()
    };
    let (a, b) = (csv(3), csv(3));
    ensure!(a == b, "same seed produced different prediction CSVs");
    ensure!(a != csv(4), "different seeds produced identical CSVs");
    Ok("4 scripted sequences stop at the predicted epoch; prediction CSVs byte-identical".into())
}

fn c8_desk_e2e() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = generate_corpus(dir.path(), &SynthConfig::default()).unwrap();
    let mut datasets = BTreeMap::new();
    datasets.insert("synthetic".to_string(), manifest);
    let mut cfg = RunConfig::benchmark(datasets, None);
    cfg.output_dir = dir.path().join("out");
    cfg.seeds = vec![0, 1, 2];
    cfg.evaluation.test_set = "synthetic".into();
    cfg.evaluation.validation_set = "synthetic".into();
    cfg.training = TrainingOverrides { patience_epochs: Some(5), max_epochs: Some(40), batch_size: Some(16), ..Default::default() };
    cfg.models = vec![
        ModelSpec::new("ConvMaxPool", Architecture::ConvMaxPool, "synthetic"),
        ModelSpec {
            training: TrainingOverrides { optimizer: Some(OptimizerKind::Adam), ..Default::default() },
            ..ModelSpec::new("w2v_synthetic", Architecture::W2vMos, "synthetic")
        },
    ];
    let registry = ProviderRegistry::new();
    let matrix = pipeline::run_matrix(&cfg, &registry, &MatrixOptions { workers: 1, use_cache: true, ..Default::default() }).unwrap();
    ensure!(matrix.failures.is_empty(), "failed runs: {:?}", matrix.failures);
    let bundle = pipeline::evaluate_models(&cfg, &[], &Level::BOTH, &Subset::All).unwrap();
    pipeline::compare(&cfg, &bundle).unwrap();
    pipeline::analyze(&cfg, &[], &Subset::All).unwrap();
    let elapsed = start.elapsed();

    let cmp = bundle.reports.iter().find(|r| r.model_id == "ConvMaxPool").unwrap();
    let utt = cmp.level(Level::Utterance).unwrap().summary(Metric::Srcc).unwrap().mean;
    let sys = cmp.level(Level::System).unwrap().summary(Metric::Srcc).unwrap().mean;
    ensure!(utt > 0.9, "utterance SRCC {utt:.3}");
    ensure!(sys > 0.95, "system SRCC {sys:.3}");
    ensure!(elapsed < Duration::from_secs(15 * 60), "took {elapsed:?}");
    Ok(format!("ConvMaxPool SRCC utterance {utt:.3}, system {sys:.3}; pipeline {:.0}s", elapsed.as_secs_f64()))
}

fn c9_analysis() -> Outcome {
    let rows: Vec<_> = (1..=5)
        .flat_map(|s| (0..3).map(move |_| (format!("s{s}"), SystemType::Bc, s as f64, Split::Test)))
        .collect();
    let bins = percentile_bins_by_system(&common::manifest(&rows)).unwrap();
    ensure!(bins.bins.len() == 5, "{} bins", bins.bins.len());
    ensure!(bins.bins.iter().all(|b| b.systems.len() == 1), "bins {:?}", bins.bins);

    // TTS truth sits in a narrow top band and its predictions are shuffled
    // within it; VC truth spans the scale and predictions are truth + noise.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let per_system = 40;
    let mut rows = Vec::new();
    for s in 0..6 {
        let t = [SystemType::Bc, SystemType::Espnet, SystemType::Vcc][s % 3];
        for _ in 0..per_system {
            let mos: f64 = if t == SystemType::Vcc { rng.random_range(1.0..5.0) } else { rng.random_range(3.5..4.5) };
            rows.push((format!("sys{s}"), t, mos, Split::Test));
        }
    }
    let manifest = common::manifest(&rows);
    let tts_var: f64 = 1.0 / 12.0;
    let noise = Normal::new(0.0, tts_var.sqrt()).unwrap();
    let runs: Vec<PredictionSet> = (0..10)
        .map(|run| {
            let mut set = PredictionSet::new("fixture", run);
            let mut tts: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1 != SystemType::Vcc).collect();
            let targets: Vec<f64> = tts.iter().map(|&i| rows[i].2).collect();
            tts.shuffle(&mut rng);
            let mut pred = vec![0.0; rows.len()];
            for (&i, &v) in tts.iter().zip(&targets) {
                pred[i] = v;
            }
            for (i, r) in rows.iter().enumerate() {
                if r.1 == SystemType::Vcc {
                    pred[i] = r.2 + noise.sample(&mut rng);
                }
                set.push(format!("u{i}"), pred[i]);
            }
            set
        })
        .collect();
    let report = system_type_breakdown(&runs, &manifest, &default_partitions(), SubsetMapping::Refit).unwrap();
    let get = |name: &str, m: Metric| {
        report.partitions.iter().find(|p| p.name == name).unwrap().report.as_ref().unwrap().summary(m).unwrap()
    };
    let (tts_srcc, vc_srcc) = (get("TTS", Metric::Srcc), get("VC", Metric::Srcc));
    let (tts_mse, vc_mse) = (get("TTS", Metric::Mse), get("VC", Metric::Mse));
    ensure!(vc_srcc.mean > tts_srcc.mean, "SRCC VC {:.3} vs TTS {:.3}", vc_srcc.mean, tts_srcc.mean);
    let overlap = (tts_mse.mean - vc_mse.mean).abs() <= tts_mse.ci95 + vc_mse.ci95;
    ensure!(overlap, "MSE TTS {:.4}±{:.4} vs VC {:.4}±{:.4}", tts_mse.mean, tts_mse.ci95, vc_mse.mean, vc_mse.ci95);
    Ok(format!(
        "5 systems -> 5 bins; SRCC VC {:.3} > TTS {:.3}; MSE TTS {:.4}±{:.4}, VC {:.4}±{:.4}",
        vc_srcc.mean, tts_srcc.mean, tts_mse.mean, tts_mse.ci95, vc_mse.mean, vc_mse.ci95
    ))
}

fn c10_subsampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let skew = Normal::<f64>::new(3.4, 0.8).unwrap();
    let types = [SystemType::Bc, SystemType::Espnet, SystemType::Vcc, SystemType::Natural];
    let rows: Vec<_> = (0..80_000)
        .map(|i| {
            let mos = skew.sample(&mut rng).clamp(1.0, 5.0);
            (format!("sys{}", i % 40), types[i % 4], mos, Split::Train)
        })
        .collect();
    let population = common::manifest(&rows);
    let result = subsample_matched(&population, 7_000, 0.25, 5).unwrap();
    ensure!(result.manifest.len() == 7_000, "size {}", result.manifest.len());
    let mut pop = [0usize; 16];
    let mut sub = [0usize; 16];
    for u in &population.utterances {
        pop[((u.mos - 1.0) / 0.25).floor().min(15.0) as usize] += 1;
    }
    for u in &result.manifest.utterances {
        sub[((u.mos - 1.0) / 0.25).floor().min(15.0) as usize] += 1;
        ensure!(population.get(&u.utterance_id).is_some(), "unknown utterance {}", u.utterance_id);
    }
    let mut worst = 0.0f64;
    for b in 0..16 {
        let quota = 7_000.0 * pop[b] as f64 / 80_000.0;
        let slack = (sub[b] as f64 - quota).abs();
        worst = worst.max(slack);
        ensure!(slack < 1.0, "bin {b}: {} drawn vs quota {quota:.3}", sub[b]);
        ensure!(sub[b] == result.bin_counts[b], "bin {b}: reported {} counted {}", result.bin_counts[b], sub[b]);
    }
    ensure!(mos_bin(5.0, 0.25) == 15, "MOS 5 bin");
    Ok(format!("7000 of 80000, 16 bins, max deviation from quota {worst:.3} utterances"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 metric oracles", c1_metric_oracles),
        ("2 P.1401 mapping properties", c2_p1401),
        ("3 ANOVA / Tukey fixtures", c3_statistics),
        ("4 architecture shapes and budget", c4_shapes),
        ("5 gradient checks", c5_gradients),
        ("6 fusion freezing", c6_freezing),
        ("7 early stopping and determinism", c7_protocol),
        ("8 desk-scale end-to-end", c8_desk_e2e),
        ("9 analysis fixtures", c9_analysis),
        ("10 matched subsampler", c10_subsampler),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
