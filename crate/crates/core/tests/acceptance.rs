//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero when any of them fails.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ambient_risk::cohort::{self, ModalitySelection};
use ambient_risk::eval::{self, ConfusionCounts};
use ambient_risk::explain::{self, PlayerKind, PlayerScheme, ShapleyMode};
use ambient_risk::features::{self, assign_period, Period};
use ambient_risk::ingest::{self, Modality};
use ambient_risk::nets::{self, bce_loss, init_model, Arch, ModelConfig, ModelParams, Predictor};
use ambient_risk::synth::{self, SynthConfig};
use ambient_risk::{cli, stats, SEQ_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn fd_max_rel_error(params: &ModelParams, x: &[f64], y: u8) -> f64 {
    const H: f64 = 1e-4;
    const CLAMP: f64 = 1e-7;
    let (_, _, analytic) = params.loss_and_gradients(x, y, CLAMP).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for ti in 0..params.tensors.len() {
        for j in 0..params.tensors[ti].data.len() {
            let w = params.tensors[ti].data[j];
            probe.tensors[ti].data[j] = w + H;
            let lp = bce_loss(probe.forward(x).unwrap(), y, CLAMP);
            probe.tensors[ti].data[j] = w - H;
            let lm = bce_loss(probe.forward(x).unwrap(), y, CLAMP);
            probe.tensors[ti].data[j] = w;
            let numeric = (lp - lm) / (2.0 * H);
            let a = analytic[ti][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    worst
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut rejected = 0;
    let mut params_checked = 0;
    for arch in Arch::ALL {
        let mut done = 0;
        while done < 20 {
            let cfg = ModelConfig {
                arch,
                hidden: rng.random_range(1..=6),
                kernel: rng.random_range(1..=SEQ_LEN),
                head_hidden: rng.random_range(0..=5),
                seed: rng.random(),
            };
            let f = rng.random_range(1..=4);
            let p = init_model(&cfg, f).unwrap();
            let x: Vec<f64> = (0..SEQ_LEN * f).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..=1u8);
            if p.kink_margin(&x).unwrap() < 1e-3 {
                rejected += 1;
                continue;
            }
            let err = fd_max_rel_error(&p, &x, y);
            ensure(err <= 1e-4, || format!("{arch} {cfg:?}: relative error {err:.3e}"))?;
            worst = worst.max(err);
            params_checked += p.param_count();
            done += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "60 triples, {params_checked} parameters, max rel err {worst:.2e}, {rejected} near-kink inputs redrawn, {elapsed:.1?}"
    ))
}

// ---------------------------------------------------------------- 2

fn random_instance(rng: &mut ChaCha8Rng, f: usize) -> (Vec<f64>, Vec<f64>) {
    let x = (0..SEQ_LEN * f).map(|_| rng.random_range(0.0..1.0)).collect();
    let b = (0..SEQ_LEN * f).map(|_| rng.random_range(0.0..1.0)).collect();
    (x, b)
}

/// A random network over `SEQ_LEN x f` inputs with weights scaled by `gain`.
fn random_net(rng: &mut ChaCha8Rng, f: usize, gain: f64) -> ModelParams {
    let arch = Arch::ALL[rng.random_range(0..3)];
    let cfg = ModelConfig {
        arch,
        hidden: rng.random_range(2..=6),
        kernel: rng.random_range(1..=4),
        head_hidden: rng.random_range(0..=4),
        seed: rng.random(),
    };
    let mut p = init_model(&cfg, f).unwrap();
    for t in &mut p.tensors {
        t.data.iter_mut().for_each(|w| *w *= gain);
    }
    p
}

/// Zeroes every input weight that reads feature `j`.
fn cut_feature(p: &mut ModelParams, j: usize) {
    let f = p.n_features;
    let k = p.config.kernel;
    let t = &mut p.tensors[0];
    match p.config.arch {
        Arch::Cnn1dX2 => {
            for o in 0..p.config.hidden {
                for s in 0..k {
                    t.data[(o * f + j) * k + s] = 0.0;
                }
            }
        }
        Arch::Lstm | Arch::Gru => {
            for r in 0..t.shape[0] {
                t.data[r * f + j] = 0.0;
            }
        }
    }
}

/// Makes input columns `i` and `j` share weights.
fn tie_features(p: &mut ModelParams, i: usize, j: usize) {
    let f = p.n_features;
    let k = p.config.kernel;
    let t = &mut p.tensors[0];
    match p.config.arch {
        Arch::Cnn1dX2 => {
            for o in 0..p.config.hidden {
                for s in 0..k {
                    t.data[(o * f + j) * k + s] = t.data[(o * f + i) * k + s];
                }
            }
        }
        Arch::Lstm | Arch::Gru => {
            for r in 0..t.shape[0] {
                t.data[r * f + j] = t.data[r * f + i];
            }
        }
    }
}

fn shapley_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut eff_worst: f64 = 0.0;
    let mut sym_worst: f64 = 0.0;
    let mut dummies = 0;

    for trial in 0..60 {
        let cell = trial % 4 == 3;
        let f = if cell { 2 } else { rng.random_range(2..=8) };
        let kind = if cell { PlayerKind::CellLevel } else { PlayerKind::FeatureLevel };
        let (x, b) = random_instance(&mut rng, f);
        // a large gain keeps the exact-mode games far from additive
        let p = random_net(&mut rng, f, 3.0);
        let scheme = PlayerScheme::new(kind, f, b.clone()).unwrap();
        let phi = explain::exact_shapley(&p, &x, &scheme).unwrap();
        let gap = phi.iter().sum::<f64>() - (p.predict(&x) - p.predict(&b));
        eff_worst = eff_worst.max(gap.abs());

        // dummy: feature j no longer reaches the network
        if !cell {
            let j = rng.random_range(0..f);
            let mut q = p.clone();
            cut_feature(&mut q, j);
            let phi = explain::exact_shapley(&q, &x, &scheme).unwrap();
            ensure(phi[j] == 0.0, || format!("dummy player {j} got {:e}", phi[j]))?;
            dummies += 1;

            // symmetry: identical weights and identical values on i and j
            let i = (j + 1) % f;
            let mut q = p.clone();
            tie_features(&mut q, i, j);
            let (mut xs, mut bs) = (x.clone(), b.clone());
            for d in 0..SEQ_LEN {
                xs[d * f + j] = xs[d * f + i];
                bs[d * f + j] = bs[d * f + i];
            }
            let scheme = PlayerScheme::new(kind, f, bs).unwrap();
            let phi = explain::exact_shapley(&q, &xs, &scheme).unwrap();
            sym_worst = sym_worst.max((phi[i] - phi[j]).abs());
        }
    }

    // closed-form models as a second family
    let g = |x: &[f64]| {
        let s: f64 = x.iter().step_by(3).sum();
        (s * x[1]).tanh() + x[0] * x[0] * x[2]
    };
    let scheme = PlayerScheme::new(PlayerKind::CellLevel, 2, (0..14).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
    let x: Vec<f64> = (0..14).map(|i| (i as f64 * 0.7).sin()).collect();
    let phi = explain::exact_shapley(&g, &x, &scheme).unwrap();
    eff_worst = eff_worst.max((phi.iter().sum::<f64>() - (g(&x) - g(&scheme.baseline))).abs());
    // players 4, 5, 7, 8, ... never read by g
    for p in (4..14).filter(|p| p % 3 != 0) {
        ensure(phi[p] == 0.0, || format!("closed-form dummy {p} got {:e}", phi[p]))?;
        dummies += 1;
    }

    ensure(eff_worst <= 1e-8, || format!("efficiency gap {eff_worst:e}"))?;
    ensure(sym_worst <= 1e-10, || format!("symmetry gap {sym_worst:e}"))?;

    // sampled vs exact at the default permutation count, on networks as
    // initialised; half the games are cell-level over a single feature
    let permutations = cli::ExplainOptions::default().permutations;
    let mut passed = 0;
    let trials = 500;
    for t in 0..trials {
        let cell = t % 2 == 1;
        let f = if cell { 1 } else { rng.random_range(2..=10) };
        let kind = if cell { PlayerKind::CellLevel } else { PlayerKind::FeatureLevel };
        let (x, b) = random_instance(&mut rng, f);
        let p = random_net(&mut rng, f, 1.0);
        let scheme = PlayerScheme::new(kind, f, b).unwrap();
        let exact = explain::exact_shapley(&p, &x, &scheme).unwrap();
        let s = explain::sampled_shapley(&p, &x, &scheme, permutations, t as u64).unwrap();
        let ok = (0..scheme.n_players()).all(|i| (s.phi[i] - exact[i]).abs() <= 4.0 * s.stderr[i] + 1e-12);
        passed += usize::from(ok);
    }
    ensure(passed * 100 >= trials * 99, || format!("sampled within 4 SE in {passed}/{trials} trials"))?;
    Ok(format!(
        "efficiency {eff_worst:.1e}, {dummies} dummies exactly 0, symmetry {sym_worst:.1e}, sampled (M = {permutations}) within 4 SE in {passed}/{trials}"
    ))
}

// ---------------------------------------------------------------- 3

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut single_class = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=30);
        let levels = rng.random_range(2..=8);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();

        let (mut pos, mut neg, mut wins) = (0u64, 0u64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            if labels[i] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        match eval::roc_auc(&scores, &labels) {
            Ok(auc) => ensure(pos > 0 && neg > 0 && auc == wins / (pos * neg) as f64, || {
                format!("auc {auc} vs oracle {} on {scores:?} {labels:?}", wins / (pos * neg) as f64)
            })?,
            Err(_) => {
                ensure(pos == 0 || neg == 0, || "auc undefined on two classes".into())?;
                single_class += 1;
            }
        }

        let threshold = rng.random_range(1..levels) as f64 / levels as f64;
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            match (scores[i] >= threshold, labels[i] == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        let precision = ratio(tp, tp + fp);
        let sensitivity = ratio(tp, tp + fn_);
        let f1 = match (precision, sensitivity) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        let m = eval::confusion_metrics(&scores, &labels, threshold);
        ensure(m.counts == ConfusionCounts { tp, fp, tn, fn_ }, || format!("counts {:?}", m.counts))?;
        let pairs = [
            (m.accuracy.get(), ratio(tp + tn, n as u64)),
            (m.f1.get(), f1),
            (m.precision.get(), precision),
            (m.sensitivity.get(), sensitivity),
            (m.specificity.get(), ratio(tn, tn + fp)),
            (m.npv.get(), ratio(tn, tn + fn_)),
        ];
        for (k, (got, want)) in pairs.into_iter().enumerate() {
            ensure(got == want, || format!("metric {k}: {got:?} vs {want:?}"))?;
        }
    }
    Ok(format!("200 instances exact, {single_class} single-class cases undefined on both sides"))
}

// ---------------------------------------------------------------- 4 and 5

struct PlantedRun {
    split: cohort::CohortSplit,
    models: Vec<(Arch, nets::CvReport, ModelParams, f64)>,
    elapsed: Duration,
}

fn planted_run() -> PlantedRun {
    let start = Instant::now();
    let cfg = SynthConfig {
        n_patients: 200,
        seed: 42,
        ..Default::default()
    };
    let out = synth::generate_cohort(&cfg).unwrap();
    let samples = ingest::parse_sensor_csv(&out.sensor_csv).unwrap();
    let labels = ingest::parse_label_csv(&out.label_csv).unwrap();
    let records = features::build_day_records(&samples, &labels, &Default::default()).unwrap();
    let split = cohort::build_cohort(&records, ModalitySelection::NoiseOnly, 0.34, 42).unwrap();
    let train_cfg = nets::TrainConfig::default();
    let mut models = Vec::new();
    for arch in Arch::ALL {
        let cv = nets::cross_validate(&nets::default_grid(arch, 42), &split.train, 3, 42, &train_cfg).unwrap();
        let (model, _) = nets::train(&cv.best_config(), &train_cfg, &split.train).unwrap();
        let report = eval::evaluate(&model, &split.test, &Default::default()).unwrap();
        models.push((arch, cv, model, report.auc.point));
    }
    PlantedRun {
        split,
        models,
        elapsed: start.elapsed(),
    }
}

fn planted_signal(run: &PlantedRun) -> Outcome {
    let aucs: Vec<String> = run.models.iter().map(|(a, _, _, auc)| format!("{a} {auc:.3}")).collect();
    let best = run.models.iter().map(|m| m.3).fold(f64::NEG_INFINITY, f64::max);
    ensure(best >= 0.85, || format!("best test AUC {best:.3} ({})", aucs.join(", ")))?;
    ensure(run.elapsed <= Duration::from_secs(600), || format!("took {:?}", run.elapsed))?;
    Ok(format!(
        "test AUC {} on {} test patients, {:.1?}",
        aucs.join(", "),
        run.split.test.len(),
        run.elapsed
    ))
}

fn attribution_truth(run: &PlantedRun) -> Outcome {
    let reports: Vec<nets::CvReport> = run.models.iter().map(|m| m.1.clone()).collect();
    let chosen = cli::best_report(&reports).unwrap();
    let (arch, _, model, _) = run.models.iter().find(|m| m.1 == *chosen).unwrap();
    let scheme = PlayerScheme::new(
        PlayerKind::FeatureLevel,
        run.split.n_features(),
        explain::train_mean_baseline(&run.split.train),
    )
    .unwrap();
    let set = explain::explain_sequences(model, &run.split.test, &scheme, &run.split.feature_names, ShapleyMode::Exact).unwrap();
    let rows = explain::summarize(&set);
    let find = |name: &str| rows.iter().find(|r| r.feature == name).unwrap();
    let night = find("noise_night_lmax");
    let day = find("noise_day_lmin");
    let detail = format!(
        "{arch}: noise_night_lmax rank {} {}, noise_day_lmin rank {} {}",
        night.rank,
        night.direction.as_str(),
        day.rank,
        day.direction.as_str()
    );
    ensure(night.rank <= 2 && night.direction == explain::Direction::Positive, || detail.clone())?;
    ensure(day.rank <= 3 && day.direction == explain::Direction::Negative, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6

fn day_night_protocol() -> Outcome {
    let cfg = SynthConfig {
        n_patients: 150,
        los_weights: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        seed: 5,
        ..Default::default()
    };
    let out = synth::generate_cohort(&cfg).unwrap();
    let samples = ingest::parse_sensor_csv(&out.sensor_csv).unwrap();
    let (mut day, mut night) = (Vec::new(), Vec::new());
    for s in samples.iter().filter(|s| s.modality == Modality::Noise) {
        match assign_period(s.timestamp).1 {
            Period::Day => day.push(s.value),
            Period::Night => night.push(s.value),
        }
    }
    ensure(day.len() >= 100_000 && night.len() >= 100_000, || {
        format!("{} day / {} night samples", day.len(), night.len())
    })?;
    let t = stats::two_sample_t(&day, &night, Default::default()).unwrap();
    ensure(t.p_two_sided < 1e-6, || format!("p = {:e}", t.p_two_sided))?;

    const Z75: f64 = 0.674_489_750_196_081_7;
    let mut worst: f64 = 0.0;
    for (values, dist) in [(&day, &cfg.noise_day), (&night, &cfg.noise_night)] {
        let synth::Gaussian { mean, sd } = *dist;
        let q = stats::quartile_summary(values).unwrap();
        for (got, want) in [(q.q1, mean - Z75 * sd), (q.median, mean), (q.q3, mean + Z75 * sd)] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 0.5, || format!("quartile gap {worst:.3} dB"))?;
    Ok(format!(
        "{} day / {} night samples, t = {:.1}, p = {} (raw {:e}), max quartile gap {worst:.3} dB",
        day.len(),
        night.len(),
        t.t,
        stats::format_p_value(t.p_two_sided),
        t.p_two_sided
    ))
}

// ---------------------------------------------------------------- 7

fn check_split(split: &cohort::CohortSplit) -> Result<(), String> {
    let train: BTreeSet<&str> = split.train.iter().map(|s| s.patient_id.as_str()).collect();
    ensure(split.test.iter().all(|s| !train.contains(s.patient_id.as_str())), || {
        format!("seed {}: train/test overlap", split.seed)
    })?;
    for s in split.train.iter().chain(&split.test) {
        ensure(s.features.len() == SEQ_LEN, || "sequence length".into())?;
        for row in &s.features[s.valid_days..] {
            ensure(row.iter().all(|&v| v.to_bits() == 0), || format!("{}: padded row not zero", s.patient_id))?;
        }
    }
    for sc in &split.scalers {
        ensure(sc.degenerate || cohort::apply_scaler(sc.min, sc) == 0.0, || format!("{sc:?} min"))?;
        ensure(sc.degenerate || cohort::apply_scaler(sc.max, sc) == 1.0, || format!("{sc:?} max"))?;
    }
    Ok(())
}

/// Recomputes per-(source, column) extremes from the raw train records and
/// checks that they land exactly on 0 and 1 in the assembled sequences.
fn check_extremes(
    split: &cohort::CohortSplit,
    records: &[features::PatientDayRecord],
    train_ids: &BTreeSet<&str>,
) -> Result<(), String> {
    let columns = cohort::feature_columns(split.selection);
    let mut first_days: std::collections::BTreeMap<&str, Vec<&features::PatientDayRecord>> = Default::default();
    for r in records.iter().filter(|r| train_ids.contains(r.patient_id.as_str())) {
        first_days.entry(r.patient_id.as_str()).or_default().push(r);
    }
    for days in first_days.values_mut() {
        days.sort_by_key(|r| r.date);
        days.truncate(SEQ_LEN);
    }
    for (c, key) in columns.iter().enumerate() {
        let mut extremes: std::collections::BTreeMap<&str, (f64, f64)> = Default::default();
        for days in first_days.values() {
            for r in days {
                if let (Some(st), Some(src)) = (r.stats(key.modality, key.period), r.source(key.modality)) {
                    let v = st.get(key.stat);
                    let e = extremes.entry(src).or_insert((v, v));
                    e.0 = e.0.min(v);
                    e.1 = e.1.max(v);
                }
            }
        }
        for (src, (lo, hi)) in extremes {
            if lo == hi {
                continue;
            }
            let mut saw = (false, false);
            for seq in split.train.iter() {
                let days = &first_days[seq.patient_id.as_str()];
                let mut row = 0;
                for r in days.iter() {
                    if !split.selection.modalities().iter().any(|&m| r.has_modality(m)) {
                        continue;
                    }
                    if r.source(key.modality) == Some(src) {
                        if let Some(st) = r.stats(key.modality, key.period) {
                            let v = seq.features[row][c];
                            if st.get(key.stat) == lo {
                                ensure(v == 0.0, || format!("{src} {}: min maps to {v}", key.name()))?;
                                saw.0 = true;
                            }
                            if st.get(key.stat) == hi {
                                ensure(v == 1.0, || format!("{src} {}: max maps to {v}", key.name()))?;
                                saw.1 = true;
                            }
                        }
                    }
                    row += 1;
                }
            }
            ensure(saw == (true, true), || format!("{src} {}: extremes not found", key.name()))?;
        }
    }
    Ok(())
}

fn cohort_integrity() -> Outcome {
    let mut checked = 0;
    let mut extreme_checks = 0;
    for block in 0..10u64 {
        let cfg = SynthConfig {
            n_patients: 24,
            samples_per_period: 12,
            fraction_noise_only: 0.2,
            fraction_light_only: 0.2,
            seed: 1000 + block,
            ..Default::default()
        };
        let out = synth::generate_cohort(&cfg).unwrap();
        let samples = ingest::parse_sensor_csv(&out.sensor_csv).unwrap();
        let labels = ingest::parse_label_csv(&out.label_csv).unwrap();
        let records = features::build_day_records(&samples, &labels, &Default::default()).unwrap();
        for k in 0..100u64 {
            let seed = block * 100 + k;
            let selection = [ModalitySelection::NoiseOnly, ModalitySelection::LightOnly, ModalitySelection::Combined]
                [(seed % 3) as usize];
            let fraction = [0.2, 0.34, 0.5][(seed / 3 % 3) as usize];
            let split = match cohort::build_cohort(&records, selection, fraction, seed) {
                Ok(s) => s,
                Err(e) => return Err(format!("seed {seed}: {e}")),
            };
            check_split(&split)?;
            if k % 10 == 0 {
                let train_ids: BTreeSet<&str> = split.train.iter().map(|s| s.patient_id.as_str()).collect();
                check_extremes(&split, &records, &train_ids)?;
                extreme_checks += 1;
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} seeds: no overlap, padding zero, scaler extremes exact; raw extremes traced on {extreme_checks} splits"
    ))
}

// ---------------------------------------------------------------- 8

const PIPELINE_CONFIG: &str = r#"{
  "schema_version": 1,
  "paths": { "out_dir": "out" },
  "synth": { "n_patients": 36, "samples_per_period": 48, "seed": 9 },
  "cohort": { "selection": "combined", "test_fraction": 0.34, "seed": 9 },
  "model": {
    "architectures": ["cnn1d_x2", "lstm", "gru"],
    "grid": [
      { "arch": "cnn1d_x2", "hidden": 4, "kernel": 2, "head_hidden": 0, "seed": 1 },
      { "arch": "cnn1d_x2", "hidden": 6, "kernel": 3, "head_hidden": 4, "seed": 1 },
      { "arch": "lstm", "hidden": 4, "head_hidden": 0, "seed": 1 },
      { "arch": "gru", "hidden": 4, "head_hidden": 3, "seed": 1 }
    ],
    "cv_folds": 3,
    "cv_seed": 9
  },
  "train": { "epochs": 6 },
  "eval": { "n_bootstrap": 60, "seed": 9 },
  "explain": { "permutations": 16, "seed": 9, "max_instances": 6 }
}"#;

const COMPARED: [&str; 5] = [
    "metrics.json",
    "attributions_feature.csv",
    "attribution_summary.csv",
    "attributions_cell.csv",
    "modality_by_day.csv",
];

fn run_pipeline(dir: &Path, jobs: Option<usize>) -> Result<Vec<Vec<u8>>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let config = dir.join("run.json");
    std::fs::write(&config, PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ambient-risk"));
    cmd.arg("--config").arg(&config).arg("pipeline").env("AMBIENT_RISK_LOG", "warn");
    if let Some(j) = jobs {
        cmd.arg("--jobs").arg(j.to_string());
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("pipeline exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    COMPARED
        .iter()
        .map(|name| std::fs::read(dir.join("out").join(name)).map_err(|e| format!("{name}: {e}")))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [("a", None), ("b", None), ("jobs4", Some(4)), ("jobs1", Some(1))];
    let mut outputs = Vec::new();
    for (name, jobs) in runs {
        outputs.push((name, run_pipeline(&tmp.path().join(name), jobs)?));
    }
    let (_, reference) = &outputs[0];
    for (name, files) in &outputs[1..] {
        for (k, file) in COMPARED.iter().enumerate() {
            ensure(files[k] == reference[k], || format!("{file} differs in run {name}"))?;
        }
    }
    let bytes: usize = reference.iter().map(Vec::len).sum();
    Ok(format!(
        "{} files ({bytes} bytes) identical across 2 default runs, --jobs 4 and --jobs 1",
        COMPARED.len()
    ))
}

// ---------------------------------------------------------------- 9

/// Replays resample `b` and counts zero denominators per metric.
fn undefined_recount(scores: &[f64], labels: &[u8], b_total: usize, seed: u64, threshold: f64) -> [usize; 7] {
    let n = scores.len();
    let mut counts = [0usize; 7];
    for b in 0..b_total {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            match (scores[i] >= threshold, labels[i] == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let pos = tp + fn_;
        let neg = tn + fp;
        counts[0] += usize::from(pos == 0 || neg == 0);
        // accuracy always has n > 0 samples
        counts[2] += usize::from(tp + fp == 0 || pos == 0 || tp == 0);
        counts[3] += usize::from(tp + fp == 0);
        counts[4] += usize::from(pos == 0);
        counts[5] += usize::from(neg == 0);
        counts[6] += usize::from(tn + fn_ == 0);
    }
    counts
}

fn bootstrap_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut total_undefined = 0;
    let mut evaluations = 0;
    while evaluations < 50 {
        let n = rng.random_range(4..=40);
        let prevalence = rng.random_range(0.05..0.5);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(prevalence))).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        let scores: Vec<f64> = labels
            .iter()
            .map(|&y| (rng.random_range(0.0..1.0) + 0.3 * f64::from(y)).min(1.0))
            .collect();
        let threshold = rng.random_range(0.2..0.8);
        let seed = rng.random();
        let report = eval::bootstrap_report(&scores, &labels, 100, seed, threshold).unwrap();
        let expected = undefined_recount(&scores, &labels, 100, seed, threshold);
        for (k, (name, m)) in report.metrics().into_iter().enumerate() {
            ensure(m.n_undefined == expected[k], || {
                format!("{name}: {} undefined reported, {} recounted", m.n_undefined, expected[k])
            })?;
            match (m.ci_low, m.ci_high) {
                (Some(lo), Some(hi)) => ensure(lo <= hi, || format!("{name}: ci {lo} > {hi}"))?,
                (None, None) => ensure(m.n_undefined == 100, || format!("{name}: missing CI"))?,
                _ => return Err(format!("{name}: half-open CI")),
            }
            total_undefined += m.n_undefined;
        }
        evaluations += 1;
    }
    Ok(format!(
        "50 evaluations x 7 metrics, ci_low <= ci_high, {total_undefined} undefined resamples matched by replay"
    ))
}

// ----------------------------------------------------------------

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let t = start.elapsed();
    match outcome {
        Ok(detail) => {
            println!("criterion {n}: PASS  {name} ({detail}) [{t:.1?}]");
            true
        }
        Err(why) => {
            println!("criterion {n}: FAIL  {name} ({why}) [{t:.1?}]");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and friends pass flags; this target has no sub-tests
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= run(1, "gradient fidelity", gradient_fidelity);
    ok &= run(2, "Shapley axioms", shapley_axioms);
    ok &= run(3, "metric oracle equivalence", metric_oracles);
    let planted = panic::catch_unwind(planted_run).map_err(|_| "planted-signal pipeline panicked".to_string());
    ok &= run(4, "planted-signal recovery", || planted.as_ref().map_err(Clone::clone).and_then(planted_signal));
    ok &= run(5, "attribution ground truth", || planted.as_ref().map_err(Clone::clone).and_then(attribution_truth));
    ok &= run(6, "day/night protocol", day_night_protocol);
    ok &= run(7, "cohort integrity", cohort_integrity);
    ok &= run(8, "pipeline determinism", determinism);
    ok &= run(9, "bootstrap contract", bootstrap_contract);
    if !ok {
        std::process::exit(1);
    }
}
