//! Acceptance gate: ten end-to-end checks with pinned tolerances.
//!
//! The checks run sequentially inside one test so wall-clock budgets are
//! meaningful on a single core, and each prints one PASS/FAIL line straight
//! to stderr (bypassing test capture) so every verdict is visible in the
//! plain `cargo test` output. A failing criterion does not stop the later
//! ones; the test asserts at the end.

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dsur_core::bspline::BsplineBasis;
use dsur_core::inference::{self, InferConfig};
use dsur_core::metrics::{self, EvalReport};
use dsur_core::model::{self, BranchConfig, HeadConfig, ModelConfig, SurrogateParams};
use dsur_core::nn::{self, ActivationKind, AdamConfig, AdamState};
use dsur_core::training::{self, PenaltySpec, TrainConfig};
use dsur_core::{baseline, datagen, RngState, Tensor};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    // direct handle write: visible even without --nocapture
    let _ = writeln!(
        std::io::stderr().lock(),
        "[{tag}] criterion {} — {}",
        o.name,
        o.detail
    );
}

#[test]
fn acceptance_criteria() {
    let checks: [fn() -> Outcome; 10] = [
        c01_gradients_match_finite_differences,
        c02_adam_matches_a_handwritten_reference,
        c03_gp_draws_reproduce_the_kernel,
        c04_bsplines_match_a_recursive_oracle,
        c05_desk_scale_surrogate_beats_the_baseline,
        c06_desk_scale_intervals_are_calibrated,
        c07_zero_dropout_collapses_the_posterior,
        c08_mis_specified_truth_still_calibrates,
        c09_bench_is_byte_reproducible,
        c10_misclassification_matches_a_hand_count,
    ];
    let mut failed = Vec::new();
    for check in checks {
        let o = check();
        report(&o);
        if !o.pass {
            failed.push(format!("criterion {}: {}", o.name, o.detail));
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

// ---------------------------------------------------------------- criterion 1

fn random_branch(rng: &mut RngState, k: usize) -> BranchConfig {
    use ActivationKind::*;
    let depth = 1 + rng.index(4);
    let mut widths = Vec::with_capacity(depth);
    let mut activations = Vec::with_capacity(depth);
    for l in 0..depth {
        widths.push(if l + 1 == depth { k } else { 2 + rng.index(15) });
        activations.push(match rng.index(3) {
            0 => Relu,
            1 => Linear,
            _ => SoftPlus,
        });
    }
    let dropout = [0.0, 0.15, 0.3][rng.index(3)];
    BranchConfig {
        widths,
        activations,
        dropout,
    }
}

/// Penalized-loss gradients across random small architectures vs central
/// finite differences, under a fixed dropout mask.
fn c01_gradients_match_finite_differences() -> Outcome {
    let t0 = Instant::now();
    let mut rng = RngState::new(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = 2 + rng.index(4);
        let cfg = ModelConfig {
            input_dim: 3,
            covariate_dim: 2,
            k,
            basis: random_branch(&mut rng, k),
            coef: random_branch(&mut rng, k),
            head: HeadConfig {
                activation: if rng.bernoulli(0.5) {
                    ActivationKind::Linear
                } else {
                    ActivationKind::SoftPlus
                },
                pin_multiply_weight: false,
            },
        };
        let child_key = rng.next_u64();
        let mut build_rng = rng.child(child_key);
        let mut params = model::build(cfg.clone(), &mut build_rng).unwrap();
        // Zero-initialized biases can pin a ReLU pre-activation exactly on the
        // kink (certain when a unit's whole fan-in is masked out), where the
        // one-sided slopes differ and finite differences are meaningless.
        // Nudged biases keep every probe differentiable.
        for layer in params
            .basis
            .iter_mut()
            .chain(params.coef.iter_mut())
            .chain(std::iter::once(&mut params.head))
        {
            for b in &mut layer.bias {
                *b = build_rng.uniform(-0.3, 0.3);
            }
        }
        let mask = model::sample_surrogate_mask(&params, &mut build_rng);
        let pen = training::resolve_penalties(&cfg, 50, &PenaltySpec::Fixed(0.03)).unwrap();

        let b = 6;
        let s = Tensor::new(
            vec![b, 2],
            (0..b * 2).map(|_| build_rng.uniform(0.0, 10.0)).collect(),
        )
        .unwrap();
        let z = Tensor::new(vec![b, 3], (0..b * 3).map(|_| build_rng.normal()).collect()).unwrap();
        let x = Tensor::new(vec![b, 2], (0..b * 2).map(|_| build_rng.normal()).collect()).unwrap();
        let y: Vec<f64> = (0..b).map(|_| build_rng.normal()).collect();

        let loss = |p: &SurrogateParams| -> f64 {
            let (preds, _) = model::predict_with_cache(p, &s, &z, &x, Some(&mask));
            training::data_loss(&preds, &y) + training::penalty_value(p, &pen, Some(&mask))
        };

        let (preds, cache) = model::predict_with_cache(&params, &s, &z, &x, Some(&mask));
        let upstream: Vec<f64> = preds
            .iter()
            .zip(&y)
            .map(|(p, yy)| (p - yy) / b as f64)
            .collect();
        let mut grads = model::backward(&params, &cache, Some(&mask), &upstream);
        training::add_penalty_grads(&params, &pen, Some(&mask), &mut grads);
        let mut analytic = Vec::new();
        model::collect_grads(&grads, &mut analytic);

        let mut theta = Vec::new();
        model::collect_params(&params, &mut theta);
        for i in 0..theta.len() {
            let saved = theta[i];
            // retry with shrinking steps: a probe that straddles a ReLU kink
            // converges to the analytic value, a genuine mismatch never does
            let mut best = f64::INFINITY;
            for scale in [1.0, 1e-2, 1e-4] {
                let h = 1e-5 * scale * (1.0 + saved.abs());
                theta[i] = saved + h;
                model::scatter_params(&mut params, &theta);
                let up = loss(&params);
                theta[i] = saved - h;
                model::scatter_params(&mut params, &theta);
                let down = loss(&params);
                theta[i] = saved;
                model::scatter_params(&mut params, &theta);
                let fd = (up - down) / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs());
                if denom < 1e-8 {
                    best = 0.0; // masked-out or dead entry: both sides zero
                    break;
                }
                best = best.min((analytic[i] - fd).abs() / denom.max(1e-4));
                if best < 1e-4 {
                    break;
                }
            }
            worst = worst.max(best);
        }
    }
    let wall = t0.elapsed();
    Outcome {
        name: "1 (gradient correctness)",
        pass: worst < 1e-4 && wall < Duration::from_secs(30),
        detail: format!("worst relative error {worst:.2e} over 20 architectures in {wall:.1?}"),
    }
}

// ---------------------------------------------------------------- criterion 2

/// Optimizer trajectory vs a self-contained textbook Adam on a 2-parameter
/// quadratic, including the exponential learning-rate schedule.
fn c02_adam_matches_a_handwritten_reference() -> Outcome {
    let t0 = Instant::now();
    let cfg = AdamConfig {
        base_lr: 0.05,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        decay_steps: 10.0,
        decay_rate: 0.9,
    };
    let grad = |w: &[f64]| [2.0 * (w[0] - 3.0), 4.0 * (w[1] + 1.0)];

    let mut w = vec![0.0f64, 0.0];
    let mut state = AdamState::new(2);

    let mut w_ref = [0.0f64, 0.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);

    let mut worst = 0.0f64;
    for t in 0..200u32 {
        let g = grad(&w);
        nn::adam_step(&mut state, &cfg, &mut w, &g);

        let g_ref = grad(&w_ref);
        let lr = 0.05 * 0.9f64.powf(f64::from(t) / 10.0);
        let bc1 = 1.0 - 0.9f64.powi(t as i32 + 1);
        let bc2 = 1.0 - 0.999f64.powi(t as i32 + 1);
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g_ref[i];
            v[i] = 0.999 * v[i] + 0.001 * g_ref[i] * g_ref[i];
            w_ref[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + 1e-8);
        }
        worst = worst.max((w[0] - w_ref[0]).abs().max((w[1] - w_ref[1]).abs()));
    }
    let wall = t0.elapsed();
    let near_minimum = (w[0] - 3.0).abs() < 0.5 && (w[1] + 1.0).abs() < 0.5;
    Outcome {
        name: "2 (optimizer oracle)",
        pass: worst < 1e-10 && near_minimum && wall < Duration::from_secs(1),
        detail: format!(
            "max per-step deviation {worst:.2e} over 200 steps, end point ({:.3}, {:.3}) in {wall:.1?}",
            w[0], w[1]
        ),
    }
}

// ---------------------------------------------------------------- criterion 3

fn c03_gp_draws_reproduce_the_kernel() -> Outcome {
    let t0 = Instant::now();
    let n = 5;
    let (alpha2, ell) = (2.0, 3.0);
    let mut rng = RngState::new(303);
    let sites = Tensor::new(
        vec![n, 2],
        (0..n * 2).map(|_| rng.uniform(0.0, 10.0)).collect(),
    )
    .unwrap();

    let draws = 10_000;
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        samples.push(datagen::sample_coef_surface(&sites, alpha2, ell, &mut rng).unwrap());
    }
    let mut mean = vec![0.0f64; n];
    for s in &samples {
        for i in 0..n {
            mean[i] += s[i];
        }
    }
    for mi in &mut mean {
        *mi /= draws as f64;
    }
    let mut emp = vec![0.0f64; n * n];
    for s in &samples {
        for i in 0..n {
            for j in 0..n {
                emp[i * n + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    for e in &mut emp {
        *e /= (draws - 1) as f64;
    }

    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let d = ((sites.at(i, 0) - sites.at(j, 0)).powi(2)
                + (sites.at(i, 1) - sites.at(j, 1)).powi(2))
            .sqrt();
            let k = alpha2 * (-d / ell).exp();
            num += (emp[i * n + j] - k) * (emp[i * n + j] - k);
            den += k * k;
        }
    }
    let rel_frob = (num / den).sqrt();
    let wall = t0.elapsed();
    Outcome {
        name: "3 (GP sampler fidelity)",
        pass: rel_frob < 0.10 && wall < Duration::from_secs(10),
        detail: format!(
            "relative Frobenius error {rel_frob:.4} over {draws} draws at 5 sites in {wall:.1?}"
        ),
    }
}

// ---------------------------------------------------------------- criterion 4

/// Plain recursive basis-function evaluation over the same knot vector.
fn deboor_oracle(knots: &[f64], i: usize, order: usize, t: f64) -> f64 {
    if order == 1 {
        return if knots[i] <= t && t < knots[i + 1] {
            1.0
        } else {
            0.0
        };
    }
    let d1 = knots[i + order - 1] - knots[i];
    let d2 = knots[i + order] - knots[i + 1];
    let left = if d1 > 0.0 {
        (t - knots[i]) / d1 * deboor_oracle(knots, i, order - 1, t)
    } else {
        0.0
    };
    let right = if d2 > 0.0 {
        (knots[i + order] - t) / d2 * deboor_oracle(knots, i + 1, order - 1, t)
    } else {
        0.0
    };
    left + right
}

fn c04_bsplines_match_a_recursive_oracle() -> Outcome {
    let (lo, hi, interior, order) = (-3.0f64, 3.0f64, 5usize, 4usize);
    let basis = BsplineBasis::clamped(lo, hi, interior, order).unwrap();
    let m = basis.len();

    // clamped knot vector mirroring the constructor's layout
    let mut knots = vec![lo; order];
    let step = (hi - lo) / (interior as f64 + 1.0);
    for i in 1..=interior {
        knots.push(lo + step * i as f64);
    }
    knots.extend(std::iter::repeat(hi).take(order));

    let mut worst_val = 0.0f64;
    let mut worst_pou = 0.0f64;
    for j in 0..100 {
        // strictly interior probes avoid the half-open convention at hi
        let t = lo + (hi - lo) * (j as f64 + 0.5) / 100.0;
        let got = basis.eval_vec(t);
        let mut sum = 0.0;
        for (i, g) in got.iter().enumerate() {
            let want = deboor_oracle(&knots, i, order, t);
            worst_val = worst_val.max((g - want).abs());
            sum += g;
        }
        worst_pou = worst_pou.max((sum - 1.0).abs());
    }
    Outcome {
        name: "4 (B-spline oracle)",
        pass: worst_val <= 1e-12 && worst_pou <= 1e-12,
        detail: format!(
            "max |value - oracle| {worst_val:.2e}, max |sum - 1| {worst_pou:.2e} over 100 probes x {m} functions"
        ),
    }
}

// ------------------------------------------------------- criteria 5 and 6

struct DeskRun {
    surrogate: EvalReport,
    fosr: EvalReport,
    wall: Duration,
}

static DESK: OnceLock<DeskRun> = OnceLock::new();

/// One desk-scale high-SNR run shared by the point-accuracy and calibration
/// criteria: full default training, default posterior draws.
fn desk_run() -> &'static DeskRun {
    DESK.get_or_init(|| {
        let t0 = Instant::now();
        let mut spec = datagen::preset("s7").unwrap();
        spec.n = 1500;
        spec.h_train = 10;
        spec.h_test = 10;
        let truth = datagen::generate(&spec).unwrap();
        let data = &truth.dataset;

        let cfg = ModelConfig::synthetic_default(data.input_dim(), data.covariate_dim());
        let train_cfg = TrainConfig::default();
        let infer_cfg = InferConfig::default();
        let rng = RngState::new(spec.seed);
        let mut build_rng = rng.child(1);
        let mut train_rng = rng.child(2);
        let mut params = model::build(cfg, &mut build_rng).unwrap();
        training::train(&mut params, data, &train_cfg, &mut train_rng).unwrap();

        let draws = inference::draw_posterior(&params, data, &infer_cfg, &rng.child(3)).unwrap();
        let pairs = data.pairs_for(&data.test_sims);
        let batch = data.gather(&pairs);
        let summaries = inference::predict_summaries(
            &params,
            &draws,
            &batch.s,
            &batch.z,
            &batch.x,
            &infer_cfg,
            &rng.child(4),
        )
        .unwrap();
        let surrogate = score(&batch.y, &summaries);

        let fosr_model = baseline::fit_fosr(data, 8, 1e-4).unwrap();
        let fosr_preds = baseline::predict_fosr(&fosr_model, &batch.s, &batch.z, &batch.x).unwrap();
        let fosr = score(&batch.y, &fosr_preds);

        DeskRun {
            surrogate,
            fosr,
            wall: t0.elapsed(),
        }
    })
}

fn score(y: &[f64], summaries: &[inference::PredictiveSummary]) -> EvalReport {
    let mean: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    let lower: Vec<f64> = summaries.iter().map(|s| s.lower).collect();
    let upper: Vec<f64> = summaries.iter().map(|s| s.upper).collect();
    EvalReport::from_predictions(y, &mean, &lower, &upper, metrics::FLOOD_THRESHOLD).unwrap()
}

fn c05_desk_scale_surrogate_beats_the_baseline() -> Outcome {
    let r = desk_run();
    let pass = r.surrogate.rmspe <= 1.0
        && r.surrogate.rmspe < r.fosr.rmspe
        && r.wall <= Duration::from_secs(900);
    Outcome {
        name: "5 (desk-scale accuracy vs baseline)",
        pass,
        detail: format!(
            "surrogate rmspe {:.4} (need <= 1.0), baseline rmspe {:.4}, wall {:.0?} (budget 900s)",
            r.surrogate.rmspe, r.fosr.rmspe, r.wall
        ),
    }
}

fn c06_desk_scale_intervals_are_calibrated() -> Outcome {
    let r = desk_run();
    let c = r.surrogate.coverage;
    Outcome {
        name: "6 (desk-scale calibration)",
        pass: (0.88..=0.99).contains(&c),
        detail: format!(
            "95% interval coverage {:.4} over {} held-out points (band [0.88, 0.99])",
            c, r.surrogate.n_eval
        ),
    }
}

// ---------------------------------------------------------------- criterion 7

fn c07_zero_dropout_collapses_the_posterior() -> Outcome {
    let mut spec = datagen::preset("s6").unwrap();
    spec.n = 60;
    spec.h_train = 6;
    spec.h_test = 3;
    spec.seed = 77;
    let truth = datagen::generate(&spec).unwrap();
    let data = &truth.dataset;

    let mut cfg = ModelConfig::synthetic_default(data.input_dim(), data.covariate_dim());
    cfg.basis.dropout = 0.0;
    cfg.coef.dropout = 0.0;
    let rng = RngState::new(7);
    let mut build_rng = rng.child(0);
    let params = model::build(cfg, &mut build_rng).unwrap();

    let infer_cfg = InferConfig {
        draws: 100,
        ..Default::default()
    };
    let draws = inference::draw_posterior(&params, data, &infer_cfg, &rng.child(1)).unwrap();

    // every mask keeps everything, so masked predictions match the unmasked
    // network bitwise and the fitted noise is the only spread left
    let pairs = data.pairs_for(&data.test_sims);
    let batch = data.gather(&pairs);
    let unmasked = model::predict_mean(&params, &batch.s, &batch.z, &batch.x, None);
    let mut identical = true;
    let mut same_noise = true;
    for d in &draws {
        let masked = model::predict_mean(&params, &batch.s, &batch.z, &batch.x, Some(&d.mask));
        identical &= masked == unmasked;
        same_noise &= d.noise_var == draws[0].noise_var;
    }

    let summaries = inference::predict_summaries(
        &params,
        &draws,
        &batch.s,
        &batch.z,
        &batch.x,
        &infer_cfg,
        &rng.child(2),
    )
    .unwrap();
    let delta = draws[0].noise_var.sqrt();
    // sd of a 100-sample Gaussian sd estimate: delta / sqrt(2 (n-1))
    let band = 3.0 * delta / (2.0 * 99.0f64).sqrt();
    let mut worst_dev = 0.0f64;
    for s in summaries.iter().take(10) {
        worst_dev = worst_dev.max((s.sd - delta).abs());
    }
    Outcome {
        name: "7 (zero-dropout collapse)",
        pass: identical && same_noise && worst_dev <= band,
        detail: format!(
            "masked == unmasked: {identical}, shared noise_var: {same_noise}, worst |sd - sqrt(noise)| {worst_dev:.2e} vs 3-sigma band {band:.2e}"
        ),
    }
}

// ---------------------------------------------------------------- criterion 8

fn c08_mis_specified_truth_still_calibrates() -> Outcome {
    let t0 = Instant::now();
    let mut spec = datagen::preset("gp1").unwrap();
    spec.n = 200;
    spec.h_train = 6;
    spec.h_test = 4;
    let truth = datagen::generate(&spec).unwrap();
    let data = &truth.dataset;

    let cfg = ModelConfig::synthetic_default(data.input_dim(), data.covariate_dim());
    let rng = RngState::new(spec.seed);
    let mut build_rng = rng.child(1);
    let mut train_rng = rng.child(2);
    let mut params = model::build(cfg, &mut build_rng).unwrap();
    training::train(&mut params, data, &TrainConfig::default(), &mut train_rng).unwrap();

    let infer_cfg = InferConfig::default();
    let draws = inference::draw_posterior(&params, data, &infer_cfg, &rng.child(3)).unwrap();
    let pairs = data.pairs_for(&data.test_sims);
    let batch = data.gather(&pairs);
    let summaries = inference::predict_summaries(
        &params,
        &draws,
        &batch.s,
        &batch.z,
        &batch.x,
        &infer_cfg,
        &rng.child(4),
    )
    .unwrap();
    let report = score(&batch.y, &summaries);
    let wall = t0.elapsed();
    let pass = report.rmspe.is_finite() && (0.85..=1.0).contains(&report.coverage);
    Outcome {
        name: "8 (mis-specified generator)",
        pass,
        detail: format!(
            "rmspe {:.4}, coverage {:.4} over {} points (band [0.85, 1.0]) in {wall:.0?}",
            report.rmspe, report.coverage, report.n_eval
        ),
    }
}

// ---------------------------------------------------------------- criterion 9

fn c09_bench_is_byte_reproducible() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("bench.toml");
    std::fs::write(
        &cfg_path,
        "[bench]\nscenarios = [\"s6\", \"s7\"]\nn = 60\nh_train = 6\nh_test = 4\nepochs = 25\ndraws = 30\n",
    )
    .unwrap();
    for dir in ["one", "two"] {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_dsur"))
            .args([
                "bench",
                "--config",
                cfg_path.to_str().unwrap(),
                "--seed",
                "41",
                "--out",
                dir,
            ])
            .current_dir(tmp.path())
            .output()
            .expect("bench runs");
        if !out.status.success() {
            return Outcome {
                name: "9 (benchmark determinism)",
                pass: false,
                detail: format!(
                    "bench exited with {:?}: {}",
                    out.status.code(),
                    String::from_utf8_lossy(&out.stderr)
                ),
            };
        }
    }
    let mut identical = true;
    let mut sizes = Vec::new();
    for name in ["table.csv", "table.md", "manifest.json"] {
        let a = std::fs::read(tmp.path().join("one").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("two").join(name)).unwrap();
        identical &= a == b;
        sizes.push(format!("{name} {}B", a.len()));
    }
    Outcome {
        name: "9 (benchmark determinism)",
        pass: identical,
        detail: format!(
            "two seeded runs {} ({})",
            if identical {
                "byte-identical"
            } else {
                "DIFFER"
            },
            sizes.join(", ")
        ),
    }
}

// --------------------------------------------------------------- criterion 10

fn c10_misclassification_matches_a_hand_count() -> Outcome {
    // hand count at threshold 4.0: rows 0 and 1 disagree, row 4 sits exactly
    // on the threshold on both sides (not exceeding), rows 2, 3, 5 agree
    let y_true = [3.9, 4.1, 5.0, 2.0, 4.0, 4.2];
    let y_pred = [4.1, 3.9, 5.5, 1.0, 4.0, 4.1];
    let got = metrics::misclassification_rate(&y_true, &y_pred, 4.0);
    let want = 2.0 / 6.0;
    Outcome {
        name: "10 (misclassification fixture)",
        pass: got == want,
        detail: format!("rate {got:.6} vs hand count {want:.6} on 6 points"),
    }
}
