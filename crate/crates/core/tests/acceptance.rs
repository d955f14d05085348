//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `--nocapture`). Tolerances are pinned in code.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use learner::analysis::{contribution_scores, varimax, varimax_criterion};
use learner::dlearner::d_learner;
use learner::fit::{fit, grad_u, grad_v, objective, FitSpec};
use learner::matrix::{
    frobenius_error, frobenius_norm, orthonormalize, subspace_distance, truncated_svd,
    ObservedMatrix, SourceBases,
};
use learner::rng::{child_rng, StreamRole};
use learner::select::{cv_select, PenaltyGrid};
use learner::sim::{
    gen_source_signal, gen_target_signal, preset, run_scenario, Method, ScenarioReport,
    Similarity,
};

fn gauss(p: usize, q: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((p, q), |_| rng.sample::<f64, _>(StandardNormal))
}

struct Outcome {
    label: &'static str,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn report(self) {
        println!(
            "criterion {}: {} ({})",
            self.label,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        );
        assert!(self.passed, "criterion {} failed: {}", self.label, self.detail);
    }
}

// ---- criterion 1: gradient correctness ------------------------------------

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let p = 30;
    let q = 8;
    let r = 3;
    let mut worst: f64 = 0.0;
    for instance in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let u = Array2::from_shape_fn((p, r), |_| rng.sample::<f64, _>(StandardNormal));
        let v = Array2::from_shape_fn((q, r), |_| rng.sample::<f64, _>(StandardNormal));
        let y_mat = Array2::from_shape_fn((p, q), |_| rng.sample::<f64, _>(StandardNormal));
        let with_missing = instance % 2 == 1;
        let y = if with_missing {
            let mask =
                Array2::from_shape_fn((p, q), |_| rng.random::<f64>() >= 0.2);
            ObservedMatrix::with_mask(y_mat, mask).unwrap()
        } else {
            ObservedMatrix::fully_observed(y_mat).unwrap()
        };
        let bases = SourceBases::new(
            truncated_svd(&gauss(p, r, 5000 + instance), r).unwrap().u().clone(),
            truncated_svd(&gauss(q, r, 6000 + instance), r).unwrap().u().clone(),
        )
        .unwrap();
        // random penalties, log-uniform over [1e-2, 1e2]
        let lam = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random::<f64>() * 4.0 - 2.0);
        let spec = FitSpec::new(r, 0.0, lam(&mut rng), 0.05)
            .with_separate_penalties(lam(&mut rng), lam(&mut rng));

        let h = 1e-6;
        let ga = grad_u(&u, &v, &y, &bases, &spec).unwrap();
        let mut gn = Array2::zeros((p, r));
        let mut up = u.clone();
        for i in 0..p {
            for j in 0..r {
                let orig = up[(i, j)];
                up[(i, j)] = orig + h;
                let f_plus = objective(&up, &v, &y, &bases, &spec).unwrap();
                up[(i, j)] = orig - h;
                let f_minus = objective(&up, &v, &y, &bases, &spec).unwrap();
                up[(i, j)] = orig;
                gn[(i, j)] = (f_plus - f_minus) / (2.0 * h);
            }
        }
        let rel_u = frobenius_error(&ga, &gn).unwrap() / frobenius_norm(&ga);

        let ga = grad_v(&u, &v, &y, &bases, &spec).unwrap();
        let mut gn = Array2::zeros((q, r));
        let mut vp = v.clone();
        for i in 0..q {
            for j in 0..r {
                let orig = vp[(i, j)];
                vp[(i, j)] = orig + h;
                let f_plus = objective(&u, &vp, &y, &bases, &spec).unwrap();
                vp[(i, j)] = orig - h;
                let f_minus = objective(&u, &vp, &y, &bases, &spec).unwrap();
                vp[(i, j)] = orig;
                gn[(i, j)] = (f_plus - f_minus) / (2.0 * h);
            }
        }
        let rel_v = frobenius_error(&ga, &gn).unwrap() / frobenius_norm(&ga);
        worst = worst.max(rel_u).max(rel_v);
    }
    let elapsed = start.elapsed();
    Outcome {
        label: "1 (gradient correctness)",
        passed: worst <= 1e-6 && elapsed < Duration::from_secs(5),
        detail: format!("worst relative error {worst:.2e}, elapsed {elapsed:?}"),
    }
    .report();
}

// ---- criteria 2 and 3: penalty limits --------------------------------------

fn limit_instance() -> (ObservedMatrix, learner::matrix::TruncatedSvd) {
    let y0 = ObservedMatrix::fully_observed(gauss(200, 20, 7)).unwrap();
    let source = truncated_svd(&gauss(200, 20, 8), 4).unwrap();
    (y0, source)
}

#[test]
fn criterion_02_lambda1_zero_reduces_to_truncated_svd() {
    let start = Instant::now();
    let (y0, source) = limit_instance();
    let mut spec = FitSpec::new(4, 0.0, 1.0, 0.01);
    spec.max_iter = 2000;
    spec.tol = 1e-12;
    let result = fit(&y0, &source, None, &spec).unwrap();
    let oracle = truncated_svd(y0.values(), 4).unwrap().reconstruct();
    let rel = frobenius_error(&result.theta_hat(), &oracle).unwrap()
        / frobenius_norm(y0.values());
    let elapsed = start.elapsed();
    Outcome {
        label: "2 (lambda1 = 0 reduction)",
        passed: rel <= 1e-2 && elapsed < Duration::from_secs(10),
        detail: format!("relative error {rel:.4} vs 0.01, elapsed {elapsed:?}"),
    }
    .report();
}

#[test]
fn criterion_03_lambda1_infinity_limit() {
    // Verified unattainable for the prescribed iteration: with fixed
    // normalized steps the off-span overshoot limits in-span progress to
    // ~||grad_data||/lambda1 per iteration, so lambda1 = 1e8 needs ~1e8
    // iterations, not 2000 (lambda1 = 1e4 with 2e4 iterations does reach
    // the projection estimator; see the dlearner consistency test). The
    // criterion is asserted as stated and expected to fail; details in the
    // project decision log.
    let start = Instant::now();
    let (y0, source) = limit_instance();
    let mut spec = FitSpec::new(4, 1e8, 1.0, 0.01);
    spec.max_iter = 2000;
    spec.tol = 1e-12;
    let result = fit(&y0, &source, None, &spec).unwrap();
    let bases = SourceBases::from_svd(&source);
    let oracle = d_learner(y0.values(), &bases).unwrap();
    let rel = frobenius_error(&result.theta_hat(), &oracle).unwrap()
        / frobenius_norm(y0.values());
    let elapsed = start.elapsed();
    Outcome {
        label: "3 (lambda1 -> infinity limit)",
        passed: rel <= 1e-2 && elapsed < Duration::from_secs(10),
        detail: format!(
            "relative error {rel:.4} vs 0.01, termination {:?}, elapsed {elapsed:?}",
            result.termination
        ),
    }
    .report();
}

// ---- criteria 4, 5, 7: simulation trends ------------------------------------

fn shared_high_report() -> &'static (ScenarioReport, Duration) {
    static REPORT: OnceLock<(ScenarioReport, Duration)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let bundle = preset("independent-high").unwrap();
        let mut scenario = bundle.scenario.clone();
        scenario.seed = 7;
        scenario.reps = 10;
        let start = Instant::now();
        let report = run_scenario(
            &scenario,
            &[Method::TargetSvd, Method::Learner, Method::DLearner],
            Some(&bundle.grid),
            Some(&bundle.spec),
        )
        .unwrap();
        (report, start.elapsed())
    })
}

#[test]
fn criterion_04_high_similarity_trend() {
    let (report, elapsed) = shared_high_report();
    let tsvd = report.methods.iter().find(|m| m.method == "target-svd").unwrap();
    let lrn = report.methods.iter().find(|m| m.method == "learner").unwrap();
    let dl = report.methods.iter().find(|m| m.method == "dlearner").unwrap();
    let improves = lrn.mean_error < tsvd.mean_error;
    let close = (lrn.mean_error - dl.mean_error).abs() <= 0.15 * dl.mean_error;
    Outcome {
        label: "4 (high-similarity trend)",
        passed: improves && close && *elapsed <= Duration::from_secs(900),
        detail: format!(
            "learner {:.3} vs tsvd {:.3}; |learner - dlearner| {:.3} vs band {:.3}; elapsed {elapsed:?}",
            lrn.mean_error,
            tsvd.mean_error,
            (lrn.mean_error - dl.mean_error).abs(),
            0.15 * dl.mean_error
        ),
    }
    .report();
}

#[test]
fn criterion_05_low_similarity_trend() {
    let bundle = preset("independent-low").unwrap();
    let mut scenario = bundle.scenario.clone();
    scenario.seed = 7;
    scenario.reps = 10;
    let start = Instant::now();
    let report = run_scenario(
        &scenario,
        &[Method::TargetSvd, Method::DLearner],
        Some(&bundle.grid),
        Some(&bundle.spec),
    )
    .unwrap();
    let elapsed = start.elapsed();
    let tsvd = report.methods.iter().find(|m| m.method == "target-svd").unwrap();
    let dl = report.methods.iter().find(|m| m.method == "dlearner").unwrap();
    Outcome {
        label: "5 (low-similarity trend)",
        passed: dl.mean_error > tsvd.mean_error && elapsed <= Duration::from_secs(900),
        detail: format!(
            "dlearner {:.3} > tsvd {:.3}; elapsed {elapsed:?}",
            dl.mean_error, tsvd.mean_error
        ),
    }
    .report();
}

#[test]
fn criterion_07_rank_recovery() {
    let (report, _) = shared_high_report();
    let lrn = report.methods.iter().find(|m| m.method == "learner").unwrap();
    let hits = lrn.selected_ranks.iter().filter(|&&r| r == 4).count();
    Outcome {
        label: "7 (rank recovery)",
        passed: hits >= 9,
        detail: format!("selected rank 4 in {hits}/10 repetitions {:?}", lrn.selected_ranks),
    }
    .report();
}

// ---- criterion 6: subspace-distance reproduction ----------------------------

#[test]
fn criterion_06_subspace_distances() {
    let mut sums = [0.0f64; 4]; // d_u moderate, d_v moderate, d_u low, d_v low
    let seeds = 5u64;
    for seed in 0..seeds {
        let mut rng = child_rng(seed, 0, StreamRole::TargetSignal);
        let theta0 = gen_target_signal(5000, 50, 4, &mut rng).unwrap();
        let mut rng_m = child_rng(seed, 0, StreamRole::SourcePerturbLeft);
        let moderate = gen_source_signal(
            &theta0,
            Similarity::Moderate,
            Similarity::Moderate.default_perturb_scale(),
            &mut rng_m,
        )
        .unwrap();
        let mut rng_l = child_rng(seed, 0, StreamRole::SourcePerturbRight);
        let low = gen_source_signal(
            &theta0,
            Similarity::Low,
            Similarity::Low.default_perturb_scale(),
            &mut rng_l,
        )
        .unwrap();
        sums[0] += subspace_distance(theta0.u(), moderate.u()).unwrap();
        sums[1] += subspace_distance(theta0.v(), moderate.v()).unwrap();
        sums[2] += subspace_distance(theta0.u(), low.u()).unwrap();
        sums[3] += subspace_distance(theta0.v(), low.v()).unwrap();
    }
    let [du_m, dv_m, du_l, dv_l] = sums.map(|s| s / seeds as f64);
    let ok = (0.30..=0.50).contains(&du_m)
        && (0.32..=0.52).contains(&dv_m)
        && (0.66..=0.90).contains(&du_l)
        && (0.71..=0.95).contains(&dv_l);
    Outcome {
        label: "6 (subspace distances)",
        passed: ok,
        detail: format!(
            "moderate d_U {du_m:.3} in [0.30,0.50], d_V {dv_m:.3} in [0.32,0.52]; \
             low d_U {du_l:.3} in [0.66,0.90], d_V {dv_l:.3} in [0.71,0.95]"
        ),
    }
    .report();
}

// ---- criterion 8: missing-data consistency ----------------------------------

#[test]
fn criterion_08_all_true_mask_matches_dense_path() {
    let p = 40;
    let q = 12;
    let r = 3;
    let y_mat = gauss(p, q, 21);
    let y_dense = ObservedMatrix::fully_observed(y_mat.clone()).unwrap();
    let y_masked =
        ObservedMatrix::with_mask(y_mat, Array2::from_elem((p, q), true)).unwrap();
    let source = truncated_svd(&gauss(p, q, 22), r).unwrap();
    let mut spec = FitSpec::new(r, 0.7, 1.3, 0.02);
    spec.max_iter = 60;
    spec.tol = 1e-12;
    let a = fit(&y_dense, &source, None, &spec).unwrap();
    let b = fit(&y_masked, &source, None, &spec).unwrap();
    let mut ok = a.objective_trajectory.len() == b.objective_trajectory.len();
    let mut worst: f64 = 0.0;
    for (x, y) in a
        .objective_trajectory
        .iter()
        .zip(b.objective_trajectory.iter())
    {
        let rel = ((x - y) / x.abs().max(1e-300)).abs();
        worst = worst.max(rel);
        ok &= rel <= 1e-12;
    }
    Outcome {
        label: "8 (missing-data consistency)",
        passed: ok,
        detail: format!(
            "{} trajectory points, worst relative gap {worst:.2e}",
            a.objective_trajectory.len()
        ),
    }
    .report();
}

// ---- criterion 9: CV self-consistency and determinism ------------------------

#[test]
fn criterion_09_cv_consistency_and_determinism() {
    let r = 2;
    let theta = gauss(24, 2, 31).dot(&gauss(10, 2, 32).t());
    let y0 = ObservedMatrix::fully_observed(&theta + &gauss(24, 10, 33).mapv(|x| 0.05 * x))
        .unwrap();
    let source = truncated_svd(&(&theta + &gauss(24, 10, 34).mapv(|x| 0.02 * x)), r).unwrap();
    let grid = PenaltyGrid::new(vec![1e-3, 1e-1, 1e1], vec![1e-2, 1e0]).unwrap();
    let mut spec = FitSpec::new(r, 0.0, 0.0, 0.05);
    spec.max_iter = 60;

    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = pool1.install(|| cv_select(&y0, &source, &grid, &spec, 99)).unwrap();
    let b = pool4.install(|| cv_select(&y0, &source, &grid, &spec, 99)).unwrap();

    let argmin_ok = {
        let min = a.cells.iter().map(|c| c.mean_mse).fold(f64::INFINITY, f64::min);
        a.cells[a.best_index].mean_mse == min && a.best_lambdas() == a.cells[a.best_index].lambdas
    };
    let identical = a.best_index == b.best_index
        && a.folds_seed == b.folds_seed
        && a.cells.len() == b.cells.len()
        && a.cells.iter().zip(b.cells.iter()).all(|(x, y)| {
            x.fold_mse == y.fold_mse && x.mean_mse == y.mean_mse && x.lambdas == y.lambdas
        })
        && frobenius_error(&a.final_fit.theta_hat(), &b.final_fit.theta_hat()).unwrap() == 0.0;
    Outcome {
        label: "9 (cv self-consistency and determinism)",
        passed: argmin_ok && identical,
        detail: format!(
            "argmin consistent: {argmin_ok}; 1-thread vs 4-thread results identical: {identical}"
        ),
    }
    .report();
}

// ---- criterion 10: varimax invariants ----------------------------------------

#[test]
fn criterion_10_varimax_invariants() {
    let mut worst_orth: f64 = 0.0;
    let mut worst_span: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + i);
        let q = 6 + (rng.random::<u32>() % 12) as usize;
        let r = 1 + (rng.random::<u32>() % 4) as usize;
        let v = Array2::from_shape_fn((q, r), |_| rng.sample::<f64, _>(StandardNormal));
        let before = varimax_criterion(&v);
        let res = varimax(&v, 1e-12, 300).unwrap();
        let eye = Array2::<f64>::eye(r);
        worst_orth = worst_orth
            .max(frobenius_error(&res.rotation.t().dot(&res.rotation), &eye).unwrap());
        worst_span = worst_span.max(
            frobenius_error(&v.dot(&v.t()), &res.rotated.dot(&res.rotated.t())).unwrap(),
        );
        worst_drop = worst_drop.max(before - res.criterion);
    }
    Outcome {
        label: "10 (varimax invariants)",
        passed: worst_orth <= 1e-10 && worst_span <= 1e-10 && worst_drop <= 1e-12,
        detail: format!(
            "orthogonality {worst_orth:.2e}, span change {worst_span:.2e}, criterion drop {worst_drop:.2e}"
        ),
    }
    .report();
}

// ---- criterion 11: contribution-score normalization ---------------------------

#[test]
fn criterion_11_contribution_score_normalization() {
    let mut worst: f64 = 0.0;
    let mut check = |basis: &Array2<f64>, label: &str| {
        let scores = contribution_scores(basis, label).unwrap();
        for j in 0..scores.scores.ncols() {
            let sum: f64 = scores.scores.column(j).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    };
    for seed in 0..10u64 {
        // bases from the truncated SVD of noisy data
        let svd = truncated_svd(&gauss(30, 12, 5000 + seed), 4).unwrap();
        check(svd.u(), "svd-u");
        check(svd.v(), "svd-v");
        // bases from the simulation generators
        let mut rng = child_rng(seed, 0, StreamRole::TargetSignal);
        let theta0 = gen_target_signal(30, 12, 3, &mut rng).unwrap();
        let mut rng_p = child_rng(seed, 0, StreamRole::SourcePerturbLeft);
        let theta1 =
            gen_source_signal(&theta0, Similarity::Low, 0.5, &mut rng_p).unwrap();
        check(theta1.u(), "source-u");
        check(theta1.v(), "source-v");
        // orthonormalized random frames and their varimax rotations
        let q = orthonormalize(&gauss(15, 3, 7000 + seed)).unwrap();
        check(&q, "orthonormalized");
        let rotated = varimax(&q, 1e-10, 200).unwrap().rotated;
        check(&rotated, "varimax-rotated");
    }
    Outcome {
        label: "11 (contribution-score normalization)",
        passed: worst <= 1e-10,
        detail: format!("worst column-sum deviation {worst:.2e}"),
    }
    .report();
}
