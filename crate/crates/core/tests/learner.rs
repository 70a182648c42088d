use rgne_core::game::{demand_response_instance, GradientFamily};
use rgne_core::learn::{feasible_gamma_interval, learn_weights, LearnOptions};
use rgne_core::uncertainty::{box_polyhedron, generate_dataset, Dataset, UncertaintyProfile};
use rgne_core::vgne::SolverOptions;

fn demand_response_dataset(m: usize, seed: u64) -> Dataset {
    let cfg = demand_response_instance();
    let profile = UncertaintyProfile::uniform(box_polyhedron(&[0.1], &[2.0]).unwrap(), 4).unwrap();
    generate_dataset(&cfg, &profile, m, seed, &SolverOptions::default()).unwrap()
}

/// Smallest slack making `beta` consistent with every sample, derived
/// directly from the constraint system: gamma sits at its upper end
/// `min(0, min_i F_i / alpha_i)` because the slack row relaxes as gamma grows.
fn required_slack(ds: &Dataset, beta: &[f64]) -> f64 {
    let cfg = demand_response_instance();
    let mut worst: f64 = 0.0;
    for p in &ds.points {
        let f = cfg.payoff.pseudo_gradient(&p.x_star, beta).unwrap();
        let gamma = f
            .as_slice()
            .iter()
            .zip(p.alpha.as_slice())
            .map(|(fi, ai)| fi / ai)
            .fold(0.0f64, f64::min);
        worst = worst.max(f.dot(&p.x_star) - gamma * cfg.budget);
    }
    worst
}

/// Coarse-to-fine grid search over `[0, 1]^4` down to resolution 1e-3.
fn grid_oracle(ds: &Dataset) -> (Vec<f64>, f64) {
    let mut centre = vec![0.5; 4];
    let mut best = (centre.clone(), f64::INFINITY);
    for (step, reach) in [(0.05, 10i32), (0.01, 5), (0.002, 5), (0.001, 2)] {
        let mut local = (centre.clone(), f64::INFINITY);
        let span = 2 * reach + 1;
        for idx in 0..span.pow(4) {
            let mut beta = centre.clone();
            let mut rest = idx;
            for b in beta.iter_mut() {
                *b += ((rest % span) - reach) as f64 * step;
                rest /= span;
            }
            if beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
                continue;
            }
            let d = required_slack(ds, &beta);
            if d < local.1 {
                local = (beta, d);
            }
        }
        centre = local.0.clone();
        best = local;
    }
    best
}

#[test]
fn pinned_weights_for_fixed_seed() {
    let ds = demand_response_dataset(10, 20_240_601);
    let cfg = demand_response_instance();
    let res = learn_weights(&ds, &cfg.payoff, cfg.budget, &LearnOptions::default()).unwrap();
    let (grid_beta, grid_delta) = grid_oracle(&ds);
    for (a, b) in res.beta_hat.iter().zip(&grid_beta) {
        assert!((a - b).abs() <= 2e-3, "{:?} vs grid {:?}", res.beta_hat, grid_beta);
    }
    assert!(res.delta.max() <= grid_delta + 1e-9);
    assert!((required_slack(&ds, &res.beta_hat) - res.delta.max()).abs() <= 1e-6);
    // Fixture: exact labels identify the weights.
    for (a, b) in res.beta_hat.iter().zip([0.1, 0.2, 0.3, 0.4]) {
        assert!((a - b).abs() <= 1e-9, "{:?}", res.beta_hat);
    }
}

#[test]
fn adding_data_never_lowers_the_slack() {
    let cfg = demand_response_instance();
    let mut ds = demand_response_dataset(12, 99);
    // Perturbed labels make the optimal slack strictly positive.
    for (k, p) in ds.points.iter_mut().enumerate() {
        for v in p.x_star.as_mut_slice() {
            *v += 0.05 * ((k % 3) as f64 - 1.0);
        }
    }
    let mut last = 0.0;
    for m in 1..=ds.len() {
        let sub = Dataset {
            points: ds.points[..m].to_vec(),
            ..ds.clone()
        };
        let d = learn_weights(&sub, &cfg.payoff, cfg.budget, &LearnOptions::default())
            .unwrap()
            .delta
            .max();
        assert!(d >= last - 1e-9, "M={m}: {d} < {last}");
        last = d;
    }
    assert!(last > 1e-4);
}

#[test]
fn forward_relation_at_solver_tolerance() {
    let cfg = demand_response_instance();
    let opts = SolverOptions::default();
    let ds = demand_response_dataset(50, 3);
    for p in &ds.points {
        let f = cfg.payoff.pseudo_gradient(&p.x_star, cfg.beta_true().unwrap()).unwrap();
        let iv = feasible_gamma_interval(&f, &p.x_star, &p.alpha, cfg.budget, 100.0 * opts.tol).unwrap();
        assert!(iv.feasible, "sample {}: {iv:?}", p.k);
    }
}

/// A highly degenerate inverse program that once drove phase 1 into an
/// ill-conditioned basis and a spurious infeasibility verdict.
#[test]
fn degenerate_hundred_sample_program_is_solved() {
    let ds = demand_response_dataset(100, 20_340_016);
    let cfg = demand_response_instance();
    let res = learn_weights(&ds, &cfg.payoff, cfg.budget, &LearnOptions::default()).unwrap();
    for (b, t) in res.beta_hat.iter().zip(cfg.beta_true().unwrap()) {
        assert!((b - t).abs() < 1e-9, "{:?}", res.beta_hat);
    }
    assert!(res.delta.max() <= required_slack(&ds, cfg.beta_true().unwrap()) + 1e-9);
}
