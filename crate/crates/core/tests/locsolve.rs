mod oracles;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use testbed_core::locsolve::*;
use testbed_core::rng::{stream, SimRng};

fn random_instance(rng: &mut SimRng, sigma: f64) -> (Vec<Point>, Vec<f64>, Point) {
    let anchors: Vec<Point> = (0..4)
        .map(|_| Point::new(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0), rng.random_range(2.2..2.8)))
        .collect();
    let truth = Point::new(rng.random_range(1.0..5.0), rng.random_range(1.0..5.0), rng.random_range(0.0..1.2));
    let noise = Normal::new(0.0, sigma).unwrap();
    let d = anchors.iter().map(|a| ((a - truth).norm() + noise.sample(rng)).max(0.0)).collect();
    (anchors, d, truth)
}

#[test]
fn lm_matches_grid_oracle() {
    let mut rng = stream(2024, "lm-oracle");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (anchors, d, truth) = random_instance(&mut rng, 0.05);
        let prob = LocalizationProblem::new(anchors.clone(), d.clone()).unwrap();
        let est = solve(&prob, &LmConfig::default()).unwrap();
        let oracle = oracles::grid_polish(&anchors, &d, &truth, 1.0);
        worst = worst.max((est.p_hat - oracle).norm());
        assert!(est.trace.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn exact_recovery_reports_convergence() {
    let mut rng = stream(7, "lm-exact");
    for _ in 0..50 {
        let (anchors, _, truth) = random_instance(&mut rng, 0.0);
        let d = anchors.iter().map(|a| (a - truth).norm()).collect();
        let prob = LocalizationProblem::new(anchors, d).unwrap();
        let est = solve(&prob, &LmConfig::default()).unwrap();
        assert!((est.p_hat - truth).norm() < 1e-9);
        assert!(est.converged);
        assert!(est.grad_norm < 1e-9, "{}", est.grad_norm);
    }
}

#[test]
fn singular_start_is_an_error() {
    let anchors = vec![Point::new(0.0, 0.0, 2.5), Point::new(4.0, 0.0, 2.5), Point::new(0.0, 4.0, 2.5)];
    let prob = LocalizationProblem::new(anchors.clone(), vec![1.0; 3]).unwrap();
    assert_eq!(solve_lm(&prob, anchors[0], &LmConfig::default()), Err(LocError::SingularPoint(0)));
}

fn point() -> impl Strategy<Value = Point> {
    (0.5f64..5.5, 0.5f64..5.5, 0.0f64..1.5).prop_map(|(x, y, z)| Point::new(x, y, z))
}

fn anchor() -> impl Strategy<Value = Point> {
    (0.0f64..6.0, 0.0f64..6.0, 2.2f64..2.8).prop_map(|(x, y, z)| Point::new(x, y, z))
}

proptest! {
    #[test]
    fn jacobian_matches_central_differences(anchors in prop::collection::vec(anchor(), 3..7), p in point(), d in 0.5f64..5.0) {
        let prob = LocalizationProblem::new(anchors.clone(), vec![d; anchors.len()]).unwrap();
        let jac = prob.jacobian(&p).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let (rh, rl) = (prob.residuals(&hi).unwrap(), prob.residuals(&lo).unwrap());
            for i in 0..anchors.len() {
                let fd = (rh[i] - rl[i]) / (2.0 * h);
                let rel = (fd - jac[i][k]).abs() / jac[i].norm();
                prop_assert!(rel < 1e-6, "rel {rel}");
            }
        }
    }

    #[test]
    fn residuals_match_direct_recomputation(anchors in prop::collection::vec(anchor(), 3..7), p in point(), ds in prop::collection::vec(0.0f64..8.0, 7)) {
        let d = ds[..anchors.len()].to_vec();
        let prob = LocalizationProblem::new(anchors.clone(), d.clone()).unwrap();
        let r = prob.residuals(&p).unwrap();
        for i in 0..anchors.len() {
            let a = anchors[i];
            let direct = ((a.x - p.x).powi(2) + (a.y - p.y).powi(2) + (a.z - p.z).powi(2)).sqrt() - d[i];
            prop_assert!((r[i] - direct).abs() <= 1e-15 * (1.0 + d[i]));
        }
    }

    #[test]
    fn translation_and_rotation_invariance(seed in any::<u64>(), tx in -3.0f64..3.0, ty in -3.0f64..3.0, tz in -1.0f64..1.0, theta in -3.1f64..3.1) {
        let mut rng = stream(seed, "inv");
        let (anchors, _, truth) = random_instance(&mut rng, 0.0);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let d: Vec<f64> = anchors.iter().map(|a| (a - truth).norm() + noise.sample(&mut rng)).collect();
        let base = solve(&LocalizationProblem::new(anchors.clone(), d.clone()).unwrap(), &LmConfig::default()).unwrap();

        let t = Point::new(tx, ty, tz);
        let moved: Vec<Point> = anchors.iter().map(|a| a + t).collect();
        let shifted = solve(&LocalizationProblem::new(moved, d.clone()).unwrap(), &LmConfig::default()).unwrap();
        prop_assert!((shifted.p_hat - (base.p_hat + t)).norm() < 1e-9);

        let rot = nalgebra::Rotation3::from_axis_angle(&Point::z_axis(), theta);
        let turned: Vec<Point> = anchors.iter().map(|a| rot * a).collect();
        let rotated = solve(&LocalizationProblem::new(turned, d).unwrap(), &LmConfig::default()).unwrap();
        prop_assert!((rotated.p_hat - rot * base.p_hat).norm() < 1e-9, "{} {} {:?} {:?}", (rotated.p_hat - rot * base.p_hat).norm(), base.iterations, base.p_hat, truth);
    }
}

#[test]
fn metrics_match_reference_implementations() {
    let mut rng = stream(31, "metrics");
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let truth = Point::new(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0), 0.0);
        let est: Vec<Point> = (0..n)
            .map(|_| truth + Point::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)))
            .collect();
        let truths = vec![truth; n];
        let dists: Vec<f64> = est.iter().map(|e| oracles::hdist(e, &truth)).collect();
        assert_eq!(cep95(&est, &truth).unwrap(), oracles::p95_by_counting(&dists));
        assert_eq!(rmse(&est, &truths).unwrap(), oracles::rmse_loop(&est, &truths));
        assert_eq!(median_offset(&est, &truth).unwrap(), oracles::median_offset_ref(&est, &truth));
    }
}
