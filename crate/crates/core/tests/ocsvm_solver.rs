mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use typweight::data::{Dataset, Sample, SplitTag};
use typweight::kernel::{KernelChoice, KernelSpec};
use typweight::ocsvm::{
    fit_class_specific, fit_ocsvm, fit_points, gram_matrix, score_dataset, solve_dual, OcsvmParams,
    ScoreMode,
};
use typweight::stats::spearman;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

#[test]
fn dual_matches_projected_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for inst in 0..50 {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=4);
        let nu = rng.random_range(0.05..1.0);
        let pts = random_points(&mut rng, n, d);
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let kernel = if inst % 2 == 0 {
            KernelSpec::rbf(rng.random_range(0.3..2.0)).unwrap()
        } else {
            KernelSpec::Linear
        };
        let k = gram_matrix(&kernel, &refs);
        let sol = solve_dual(&k, n, nu, 1e-9, 100_000).unwrap();
        let oracle = common::qp_oracle(&k, n, nu);
        assert!(
            (sol.objective - oracle).abs() < 1e-6,
            "instance {inst}: smo {} oracle {}",
            sol.objective,
            oracle
        );
        let ub = 1.0 / (nu * n as f64);
        assert!((sol.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        assert!(sol.alpha.iter().all(|&a| a >= -1e-8 && a <= ub + 1e-8));
    }
}

#[test]
fn square_corners_get_equal_weight() {
    let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let k = gram_matrix(&KernelSpec::rbf(1.0).unwrap(), &refs);
    let sol = solve_dual(&k, 4, 0.5, 1e-10, 100_000).unwrap();
    for a in &sol.alpha {
        assert!((a - 0.25).abs() < 1e-6, "{:?}", sol.alpha);
    }
    assert!((sol.objective - common::qp_oracle(&k, 4, 0.5)).abs() < 1e-9);
}

#[test]
fn fitted_models_are_dual_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let n = rng.random_range(5..60);
        let pts = random_points(&mut rng, n, 3);
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let m = fit_points(&refs, &OcsvmParams::default(), 0).unwrap();
        let ub = 1.0 / (m.nu * n as f64);
        assert!((m.alphas.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        assert!(m.alphas.iter().all(|&a| a > 0.0 && a <= ub + 1e-8));
    }
}

fn rotate(p: &[f64], theta: f64, shift: [f64; 2]) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    vec![
        c * p[0] - s * p[1] + shift[0],
        s * p[0] + c * p[1] + shift[1],
    ]
}

#[test]
fn rbf_scores_are_rigid_motion_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts = random_points(&mut rng, 40, 2);
    let moved: Vec<Vec<f64>> = pts.iter().map(|p| rotate(p, 0.7, [3.0, -1.0])).collect();
    let params = OcsvmParams {
        kernel: KernelChoice::Rbf {
            bandwidth: Some(0.8),
        },
        tol: 1e-10,
        ..OcsvmParams::default()
    };
    let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let mrefs: Vec<&[f64]> = moved.iter().map(|p| p.as_slice()).collect();
    let a = fit_points(&refs, &params, 0).unwrap();
    let b = fit_points(&mrefs, &params, 0).unwrap();
    let probes = random_points(&mut rng, 20, 2);
    for p in &probes {
        let sa = a.decision_score(p).unwrap();
        let sb = b.decision_score(&rotate(p, 0.7, [3.0, -1.0])).unwrap();
        assert!((sa - sb).abs() < 1e-9, "{sa} vs {sb}");
    }
}

fn gaussian_class(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    center: f64,
    label: usize,
    first_id: u64,
) -> Vec<Sample<f64>> {
    use rand_distr::StandardNormal;
    (0..n)
        .map(|i| {
            let x = (0..d)
                .map(|_| center + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Sample::new(first_id + i as u64, x, label)
        })
        .collect()
}

#[test]
fn scores_fall_with_distance_from_center() {
    for dim in [8, 32] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = gaussian_class(&mut rng, 500, dim, 0.0, 0, 0);
        let d = Dataset::new(samples, 1, SplitTag::Train).unwrap();
        let m = fit_ocsvm(&d, &OcsvmParams::default(), 0).unwrap();
        let scores: Vec<f64> = d.features().map(|x| m.decision_score(x).unwrap()).collect();
        let dist: Vec<f64> = d
            .features()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rho = spearman(&scores, &dist).unwrap();
        assert!(rho <= -0.9, "dim {dim}: {rho}");
    }
}

fn two_clouds() -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = gaussian_class(&mut rng, 80, 3, -6.0, 0, 0);
    s.extend(gaussian_class(&mut rng, 80, 3, 6.0, 1, 80));
    Dataset::new(s, 2, SplitTag::Train).unwrap()
}

#[test]
fn class_models_prefer_own_class() {
    let d = two_clouds();
    let models = fit_class_specific(&d, &OcsvmParams::default(), 0).unwrap();
    for s in d.samples() {
        let own = models[s.label].decision_score(&s.features).unwrap();
        let other = models[1 - s.label].decision_score(&s.features).unwrap();
        assert!(own > other);
    }
}

#[test]
fn general_and_class_tables_differ() {
    let d = two_clouds();
    let params = OcsvmParams::default();
    let general = fit_ocsvm(&d, &params, 0).unwrap();
    let per_class = fit_class_specific(&d, &params, 0).unwrap();
    let g = score_dataset(std::slice::from_ref(&general), &d, ScoreMode::General).unwrap();
    let c = score_dataset(&per_class, &d, ScoreMode::ClassSpecific).unwrap();
    assert_eq!(g.len(), c.len());
    assert_ne!(g.probabilities(), c.probabilities());
}

#[test]
fn fitting_is_deterministic() {
    let d = two_clouds();
    let a = fit_ocsvm(&d, &OcsvmParams::default(), 7).unwrap();
    let b = fit_ocsvm(&d, &OcsvmParams::default(), 7).unwrap();
    assert_eq!(a, b);
    let ta = score_dataset(std::slice::from_ref(&a), &d, ScoreMode::General).unwrap();
    let tb = score_dataset(std::slice::from_ref(&b), &d, ScoreMode::General).unwrap();
    assert_eq!(ta, tb);
}
