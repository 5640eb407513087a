//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line to stderr (uncaptured) before asserting.
//!
//! Criteria 4 to 6 share one simulation study, computed once per process.

mod common;

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use hidemk::filter::{q_values, select_multiple, select_single};
use hidemk::harness::{
    aggregate_curves, augmented_input, base_run, method_architecture, resolve_run, run_pipeline, simulate_replicate,
    CurveRow, Method, PipelineConfig, ReplicateReport,
};
use hidemk::io;
use hidemk::knockoff::{diagnostics, scit_generate};
use hidemk::model::{
    build, comparison_architectures, derandomized_importance, mean_off_diagonal, w_correlation, ArchitectureConfig,
    TrainData,
};
use hidemk::nn::{
    auc, backprop, bce, fit, input_gradients, mse, Activation, AdamConfig, FitOptions, LossKind, ModelState, Tensor,
};
use hidemk::sim::{effect_sizes, simulate_dataset, simulate_genotypes, MafSampler, SignPattern, SimConfig, TraitKind};
use hidemk::{seed, stats};
use rand::Rng;

fn report(criterion: u8, pass: bool, detail: &str) {
    let line = format!("criterion {criterion}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
}

fn conclude(criterion: u8, pass: bool, detail: String) {
    report(criterion, pass, &detail);
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ------------------------------------------------------------------ 1

/// Central difference refined by one Richardson step.
fn richardson(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut r = rng(101);
    let hidden = [Activation::Elu, Activation::Sigmoid, Activation::Linear];
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for net in 0..20 {
        let p = [10, 15, 20, 12, 18][net % 5];
        let theta = 1 + net % 3;
        let (head, loss) = if net % 2 == 0 {
            (Activation::Sigmoid, LossKind::Bce)
        } else {
            (Activation::Linear, LossKind::Mse)
        };
        let covariates = net % 3;
        let l1 = if net % 4 == 0 { 0.01 } else { 0.0 };
        let spec = hierarchical_spec(p, 2, 5, theta, 4, covariates, hidden[net % 3], head, l1);
        let mut state = ModelState::init(&spec, 1000 + net as u64);
        randomize_biases(&mut state, &mut r);
        // Keep weights off the |w| kink of the L1 term.
        for layer in &mut state.params {
            for w in layer.weight.data_mut() {
                if w.abs() < 1e-3 {
                    *w = if *w < 0.0 { -1e-3 } else { 1e-3 };
                }
            }
        }
        let n = 5;
        let x = random_tensor(&mut r, vec![n, p * 3], 1.0);
        let cov = random_tensor(&mut r, vec![n, covariates], 1.0);
        let y: Vec<f64> = (0..n).map(|i| if loss == LossKind::Bce { (i % 2) as f64 } else { r.random_range(-1.0..1.0) }).collect();
        let cov_opt = (covariates > 0).then_some(&cov);
        let bp = backprop(&spec, &state, &x, cov_opt, &y, loss).unwrap();
        let h = 1e-4;
        for li in 0..spec.layers.len() {
            for which in 0..2 {
                let len = if which == 0 { state.params[li].weight.len() } else { state.params[li].bias.len() };
                for k in 0..len {
                    let obj = |d: f64| {
                        let mut s = state.clone();
                        let slot = if which == 0 { &mut s.params[li].weight.data_mut()[k] } else { &mut s.params[li].bias.data_mut()[k] };
                        *slot += d;
                        reference_objective(&spec, &s, &x, &cov, &y, loss)
                    };
                    let fd = richardson(obj, h);
                    let g = if which == 0 { bp.grads.layers[li].weight.data()[k] } else { bp.grads.layers[li].bias.data()[k] };
                    worst = worst.max(rel_err(fd, g));
                    checked += 1;
                }
            }
        }
        let grad = input_gradients(&spec, &state, &x, cov_opt).unwrap();
        for i in 0..n {
            for j in 0..p * 3 {
                let f = |d: f64| {
                    let mut xi = x.row(i).to_vec();
                    xi[j] += d;
                    reference_forward(&spec, &state, &xi, cov.row(i))
                };
                worst = worst.max(rel_err(richardson(f, h), grad.row(i)[j]));
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    conclude(
        1,
        worst < 1e-5 && secs < 60.0,
        format!("20 networks, {checked} gradients, max relative error {worst:.2e}, {secs:.1}s"),
    );
}

// ------------------------------------------------------------------ 2

fn brute_selection(kappa: &[usize], tau: &[f64], alpha: f64, m: usize) -> Vec<usize> {
    let ratio = |t: f64| {
        let null = (0..tau.len()).filter(|&j| kappa[j] >= 1 && tau[j] >= t).count();
        let pos = (0..tau.len()).filter(|&j| kappa[j] == 0 && tau[j] >= t).count();
        (1.0 / m as f64 + null as f64 / m as f64) / pos.max(1) as f64
    };
    let t_hat = tau.iter().copied().filter(|&t| t > 0.0 && ratio(t) <= alpha).fold(f64::INFINITY, f64::min);
    if t_hat.is_infinite() {
        return vec![];
    }
    (0..tau.len()).filter(|&j| kappa[j] == 0 && tau[j] >= t_hat).collect()
}

#[test]
fn criterion_02_threshold_equals_q_value_selection() {
    let start = Instant::now();
    let mut r = rng(202);
    let mut mismatches = 0;
    let mut nonempty = 0;
    for _ in 0..1000 {
        let m = if r.random_bool(0.5) { 3 } else { 5 };
        let p = r.random_range(1..=12);
        let kappa: Vec<usize> = (0..p).map(|_| if r.random_bool(0.6) { 0 } else { r.random_range(1..=m) }).collect();
        // a coarse grid makes ties and zeros common
        let tau: Vec<f64> = (0..p).map(|_| r.random_range(0..8) as f64 * 0.25).collect();
        let q = q_values(&kappa, &tau, m).unwrap();
        for alpha in [0.05, 0.1, 0.2] {
            let by_threshold = select_multiple(&kappa, &tau, alpha, m).unwrap().selected;
            let by_q: Vec<usize> = (0..p).filter(|&j| q[j] <= alpha).collect();
            let brute = brute_selection(&kappa, &tau, alpha, m);
            nonempty += usize::from(!brute.is_empty());
            if by_threshold != by_q || by_threshold != brute {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    conclude(
        2,
        mismatches == 0 && secs < 60.0,
        format!("1000 instances x 3 alphas, {mismatches} mismatches, {nonempty} nonempty selections, {secs:.2}s"),
    );
}

// ------------------------------------------------------------------ 3

#[test]
fn criterion_03_minimum_rejection_sizes() {
    let alpha = 0.1;
    // Single knockoff: k positive W and no negatives gives ratio 1/k.
    let single_min = (1..=20)
        .find(|&k| !select_single(&vec![1.0; k], alpha).unwrap().selected.is_empty())
        .unwrap();
    // M = 5: k winning originals and no null winners gives ratio 1/(5k).
    let multi_min = (1..=20)
        .find(|&k| !select_multiple(&vec![0; k], &vec![1.0; k], alpha, 5).unwrap().selected.is_empty())
        .unwrap();
    // Random constructions never return a nonempty set below the bound.
    let mut r = rng(303);
    let mut violations = 0;
    for _ in 0..5000 {
        let p = r.random_range(1..=40);
        let a = [0.05, 0.1, 0.2, 0.3][r.random_range(0..4)];
        let w: Vec<f64> = (0..p).map(|_| r.random_range(-4i32..=6) as f64).collect();
        let s = select_single(&w, a).unwrap().selected.len();
        if s != 0 && s < (1.0 / a).ceil() as usize {
            violations += 1;
        }
        let kappa: Vec<usize> = (0..p).map(|_| if r.random_bool(0.7) { 0 } else { r.random_range(1..=5) }).collect();
        let tau: Vec<f64> = (0..p).map(|_| r.random_range(0..6) as f64).collect();
        let s = select_multiple(&kappa, &tau, a, 5).unwrap().selected.len();
        if s != 0 && s < (1.0 / (5.0 * a)).ceil() as usize {
            violations += 1;
        }
    }
    conclude(
        3,
        single_min == 10 && multi_min == 2 && violations == 0,
        format!("minimum nonempty at alpha 0.1: single {single_min}, M=5 {multi_min}; {violations} violations in 10000 random cases"),
    );
}

// ------------------------------------------------------------------ 4 to 6

const STUDY_METHODS: [Method; 4] = [Method::HidemkDerand, Method::HidemkDerandM1, Method::HidemkDerandRelu, Method::Lasso];

struct Study {
    curves: Vec<CurveRow>,
    failed: usize,
    mean_p: f64,
    minutes: f64,
}

impl Study {
    fn row(&self, method: Method, kind: TraitKind, target: f64) -> &CurveRow {
        self.curves
            .iter()
            .find(|c| c.method == method.as_str() && c.trait_kind == kind.as_str() && (c.target_fdr - target).abs() < 1e-12)
            .unwrap_or_else(|| panic!("no curve for {method} {kind} {target}"))
    }
}

fn study_config(kind: TraitKind) -> PipelineConfig {
    PipelineConfig {
        trait_kind: kind,
        knockoffs: 5,
        replicates: 50,
        ensemble: 5,
        methods: STUDY_METHODS.to_vec(),
        master_seed: 4_000 + kind as u64,
        ..PipelineConfig::default()
    }
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let mut reports: Vec<ReplicateReport> = Vec::new();
        for kind in [TraitKind::Quantitative, TraitKind::Dichotomous] {
            reports.extend(run_pipeline(&study_config(kind)).unwrap());
        }
        let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let _ = std::fs::remove_file(dir.join("reports.jsonl"));
        io::append_reports(&dir.join("reports.jsonl"), &reports).unwrap();
        let curves = aggregate_curves(&reports).unwrap();
        io::write_curves(&dir.join("curves.csv"), &curves).unwrap();
        let ok: Vec<&ReplicateReport> = reports.iter().filter(|r| !r.failed()).collect();
        Study {
            failed: reports.len() - ok.len(),
            mean_p: ok.iter().map(|r| r.p as f64).sum::<f64>() / ok.len().max(1) as f64,
            curves,
            minutes: start.elapsed().as_secs_f64() / 60.0,
        }
    })
}

#[test]
fn criterion_04_fdr_control() {
    let s = study();
    let mut pass = s.failed == 0;
    let mut parts = vec![format!("mean p {:.0}, {} failed, {:.1} min", s.mean_p, s.failed, s.minutes)];
    for kind in [TraitKind::Quantitative, TraitKind::Dichotomous] {
        for target in [0.05, 0.1, 0.2] {
            let c = s.row(Method::HidemkDerand, kind, target);
            pass &= c.fdr_mean <= target + 0.05 && c.n_replicates == 50;
            parts.push(format!("{} fdr@{target:.2}={:.3}", kind.as_str(), c.fdr_mean));
        }
    }
    conclude(4, pass, parts.join(", "));
}

#[test]
fn criterion_05_power_at_low_target() {
    let s = study();
    let mut pass = s.failed == 0;
    let mut parts = Vec::new();
    for kind in [TraitKind::Quantitative, TraitKind::Dichotomous] {
        let multi = s.row(Method::HidemkDerand, kind, 0.05).power_mean;
        let single = s.row(Method::HidemkDerandM1, kind, 0.05).power_mean;
        let lasso = s.row(Method::Lasso, kind, 0.05).power_mean;
        pass &= multi >= single && multi >= lasso;
        parts.push(format!(
            "{}: M=5 {multi:.3}, M=1 {single:.3} (margin {:+.3}), lasso {lasso:.3} (margin {:+.3})",
            kind.as_str(),
            multi - single,
            multi - lasso
        ));
    }
    conclude(5, pass, parts.join("; "));
}

#[test]
fn criterion_06_elu_not_below_relu() {
    let s = study();
    let mut pass = s.failed == 0;
    let mut parts = Vec::new();
    for kind in [TraitKind::Quantitative, TraitKind::Dichotomous] {
        for target in [0.1, 0.2] {
            let elu = s.row(Method::HidemkDerand, kind, target).power_mean;
            let relu = s.row(Method::HidemkDerandRelu, kind, target).power_mean;
            pass &= elu >= relu;
            parts.push(format!("{}@{target:.1}: elu {elu:.3} relu {relu:.3} (gap {:+.3})", kind.as_str(), elu - relu));
        }
    }
    conclude(6, pass, parts.join("; "));
}

// ------------------------------------------------------------------ 7

#[test]
fn criterion_07_derandomization_stability() {
    let start = Instant::now();
    let cfg = PipelineConfig { master_seed: 7_000, ..PipelineConfig::default() };
    let data = simulate_replicate(&cfg, 0).unwrap();
    let inputs = data.inputs();
    let arch = method_architecture(&cfg, Method::HidemkDerand, data.x.ncols()).unwrap();
    let xa = augmented_input(&inputs, &arch).unwrap();
    let td = TrainData { x: &xa, cov: Some(&data.covariate), y: inputs.y };
    let run = resolve_run(&cfg, &arch, base_run(&cfg, &inputs), td).unwrap();
    let with_seed = |s: u64| hidemk::model::RunConfig { master_seed: seed::derive(run.master_seed, &[s]), ..run.clone() };

    let medians: Vec<_> = (0..5u64)
        .map(|e| derandomized_importance(&arch, &with_seed(e), td, 10, None).unwrap().median)
        .collect();
    let ensemble_corr = mean_off_diagonal(&w_correlation(&medians).unwrap(), medians.len());
    let singles = derandomized_importance(&arch, &with_seed(99), td, 10, None).unwrap();
    let single_corr = singles.mean_pairwise_correlation();
    let secs = start.elapsed().as_secs_f64();
    conclude(
        7,
        ensemble_corr - single_corr >= 0.1 && secs < 1800.0,
        format!(
            "mean pairwise W correlation: 5 ensembles (R=10) {ensemble_corr:.3}, 10 single runs {single_corr:.3}, margin {:+.3}, {} epochs, {secs:.0}s",
            ensemble_corr - single_corr,
            run.epochs
        ),
    );
}

// ------------------------------------------------------------------ 8

fn seconds_per_epoch(arch: &ArchitectureConfig, x: &Tensor, y: &[f64], reps: usize) -> f64 {
    let built = build(arch).unwrap();
    let rows: Vec<usize> = (0..y.len()).collect();
    let opts = FitOptions {
        epochs: 1,
        batch_size: 100,
        adam: AdamConfig::with_lr(1e-3),
        loss: LossKind::Bce,
        shuffle_seed: 1,
    };
    (0..reps)
        .map(|k| {
            let mut state = ModelState::init(&built.spec, k as u64);
            let t = Instant::now();
            fit(&built.spec, &mut state, x, None, y, &rows, None, &opts).unwrap();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_08_hierarchy_size_and_epoch_time() {
    let start = Instant::now();
    let [fc, one, two] = comparison_architectures(1000, 5, 25, 8);
    let count = |a: &ArchitectureConfig| build(a).unwrap().parameters;
    let (c0, c1, c2) = (count(&fc), count(&one), count(&two));
    let counts_ok = c2 * 10 <= c1 && c2 * 1000 <= c0;

    let n = 400;
    let x = random_tensor(&mut rng(8), vec![n, 1000 * 6], 1.0);
    let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let t2 = seconds_per_epoch(&two, &x, &y, 3);
    let t1 = seconds_per_epoch(&one, &x, &y, 2);
    let secs = start.elapsed().as_secs_f64();
    conclude(
        8,
        counts_ok && t2 <= t1 && secs < 600.0,
        format!(
            "parameters FC {c0}, 1-level {c1}, 2-level {c2} (ratios {:.1}x, {:.0}x); epoch time 2-level {t2:.3}s vs 1-level {t1:.3}s; {secs:.0}s",
            c1 as f64 / c2 as f64,
            c0 as f64 / c2 as f64
        ),
    );
}

// ------------------------------------------------------------------ 9

#[test]
fn criterion_09_region_arithmetic() {
    let arch = ArchitectureConfig { p: 11_662, knockoffs: 5, sigma: 1800, theta: 8, ..ArchitectureConfig::default() };
    let b = build(&arch).unwrap();
    conclude(
        9,
        b.region_groups == 6 && b.flattened_width == 48,
        format!("{} region groups, flattened width {}", b.region_groups, b.flattened_width),
    );
}

// ------------------------------------------------------------------ 10

#[test]
fn criterion_10_simulation_calibration() {
    let start = Instant::now();
    let mafs = [0.01, 0.08, 0.25, 0.45];
    let hwe: Vec<f64> = mafs.iter().map(|m| 2.0 * m * (1.0 - m)).collect();
    let a = effect_sizes(&mafs, &hwe, 0.2, SignPattern::FirstNegative).unwrap().a;
    let a_ok = (a - 0.05f64.sqrt()).abs() < 1e-12;

    let cfg = SimConfig { n: 2000, ..SimConfig::default() };
    let ds = simulate_dataset(&cfg, TraitKind::Dichotomous, 10).unwrap();
    let realized: f64 = ds
        .causal
        .iter()
        .zip(&ds.trait_spec.beta)
        .map(|(&j, b)| b * b * ds.genotypes.empirical_variance(j))
        .sum();
    let target = TraitKind::Dichotomous.default_variance_target();
    let var_gap = (realized - target).abs();

    let big = SimConfig { n: 10_000, ..SimConfig::default() };
    let ds = simulate_dataset(&big, TraitKind::Dichotomous, 11).unwrap();
    let prevalence = stats::mean(&ds.phenotype.y);
    let secs = start.elapsed().as_secs_f64();
    conclude(
        10,
        a_ok && var_gap < 1e-10 && (prevalence - 0.10).abs() <= 0.01 && secs < 60.0,
        format!("a = {a:.5}, |realized - target| = {var_gap:.1e}, prevalence at n=10000 {prevalence:.4}, {secs:.1}s"),
    );
}

// ------------------------------------------------------------------ 11

#[test]
fn criterion_11_exchangeability() {
    let start = Instant::now();
    let g = simulate_genotypes(5000, 100, 0.7, &MafSampler::LogUniform { min: 0.005, max: 0.5 }, 11).unwrap();
    let x = g.to_dmatrix();
    let k = scit_generate(&x, 5, 10, 111).unwrap();
    let rep = diagnostics(&x, &k).unwrap();
    let good = rep
        .features
        .iter()
        .filter(|f| {
            let mean_gap = f.knockoff_mean.iter().map(|m| (m - f.mean).abs()).fold(0.0, f64::max);
            let nb = f.neighbor_gap.iter().copied().fold(0.0, f64::max);
            mean_gap < 0.05 && nb < 0.05
        })
        .count();
    let frac = good as f64 / rep.features.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    conclude(
        11,
        frac >= 0.95 && secs < 120.0,
        format!(
            "{good}/{} features within both gaps (max mean gap {:.2e}, max neighbour gap {:.3}), {secs:.1}s",
            rep.features.len(),
            rep.max_mean_gap,
            rep.max_neighbor_gap
        ),
    );
}

// ------------------------------------------------------------------ 12

#[test]
fn criterion_12_auc_and_loss_oracles() {
    let mut r = rng(1212);
    let mut mismatches = 0;
    for _ in 0..100 {
        let np = r.random_range(1..30);
        let nn = r.random_range(1..30);
        let draw = |r: &mut rand_chacha::ChaCha8Rng| r.random_range(0..10) as f64 / 4.0;
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut r)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(&mut r)).collect();
        let mut wins = 0.0;
        for &a in &pos {
            for &b in &neg {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        if auc(&pos, &neg).unwrap() != wins / (np * nn) as f64 {
            mismatches += 1;
        }
    }
    let b = bce(&[1.0], &[0.5]).unwrap();
    let bce_gap = (b - std::f64::consts::LN_2).abs();
    let y = [0.3, -1.2, 4.0];
    let m = mse(&y, &y).unwrap();
    conclude(
        12,
        mismatches == 0 && bce_gap <= 1e-12 && m == 0.0,
        format!("auc mismatches {mismatches}/100, |bce - ln 2| = {bce_gap:.1e}, mse(y, y) = {m}"),
    );
}
