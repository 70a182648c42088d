use proptest::prelude::*;
use rgne_core::game::{aggregate, GameConfig, GradientFamily, PlayerMatrix, QuadraticPayoffParams};
use rgne_core::learn::feasible_gamma_interval;

fn game(n: usize) -> impl Strategy<Value = (QuadraticPayoffParams, Vec<f64>)> {
    (
        prop::collection::vec(0.5f64..2.0, n),
        prop::collection::vec(10.0f64..70.0, n),
        0.0f64..0.1,
        0.0f64..10.0,
        prop::collection::vec(0.0f64..1.0, n),
    )
        .prop_map(|(l, h, q, p0, beta)| (QuadraticPayoffParams { l, h, q, p0 }, beta))
}

fn profile(n: usize) -> impl Strategy<Value = PlayerMatrix> {
    prop::collection::vec(0.0f64..40.0, n).prop_map(|v| PlayerMatrix::column(&v))
}

proptest! {
    #[test]
    fn aggregator_is_linear(
        x in profile(4), y in profile(4),
        beta in prop::collection::vec(-1.0f64..1.0, 4),
        a in -3.0f64..3.0, b in -3.0f64..3.0,
    ) {
        let combo = x.lin_comb(a, &y, b);
        let lhs = aggregate(&combo, &beta).unwrap()[0];
        let rhs = a * aggregate(&x, &beta).unwrap()[0] + b * aggregate(&y, &beta).unwrap()[0];
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gradient_matches_finite_differences((params, beta) in game(4), x in profile(4)) {
        let f = params.pseudo_gradient(&x, &beta).unwrap();
        let h = 1e-3;
        for i in 0..4 {
            let mut up = x.clone();
            up.row_mut(i)[0] += h;
            let mut down = x.clone();
            down.row_mut(i)[0] -= h;
            // Payoffs are quadratic, so the central difference is exact up to rounding.
            let fd = (params.payoff_value(i, &up, &beta).unwrap()
                - params.payoff_value(i, &down, &beta).unwrap()) / (2.0 * h);
            prop_assert!((fd - f.row(i)[0]).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {}", fd, f.row(i)[0]);
        }
    }

    #[test]
    fn affine_decomposition_reproduces_gradient((params, beta) in game(5), x in profile(5)) {
        let dec = params.affine_decomposition(&x).unwrap();
        let f = params.pseudo_gradient(&x, &beta).unwrap();
        prop_assert!(dec.evaluate(&beta).unwrap().max_abs_diff(&f) <= 1e-10 * (1.0 + f.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }

    #[test]
    fn larger_slack_never_shrinks_interval(
        f in prop::collection::vec(-50.0f64..50.0, 4),
        x in prop::collection::vec(0.0f64..30.0, 4),
        alpha in prop::collection::vec(0.1f64..2.0, 4),
        d1 in 0.0f64..10.0, extra in 0.0f64..10.0,
    ) {
        let (f, x, alpha) = (PlayerMatrix::column(&f), PlayerMatrix::column(&x), PlayerMatrix::column(&alpha));
        let small = feasible_gamma_interval(&f, &x, &alpha, 75.0, d1).unwrap();
        let large = feasible_gamma_interval(&f, &x, &alpha, 75.0, d1 + extra).unwrap();
        prop_assert!(large.lo <= small.lo && large.hi >= small.hi);
        prop_assert!(!small.feasible || large.feasible);
    }
}

proptest! {
    // Each case scans a million grid points.
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gamma_interval_matches_grid_scan(
        f in prop::collection::vec(-50.0f64..50.0, 3),
        x in prop::collection::vec(0.0f64..30.0, 3),
        alpha in prop::collection::vec(-0.5f64..2.0, 3),
        b in 10.0f64..100.0,
        delta in 0.0f64..20.0,
    ) {
        let (f, x, alpha) = (PlayerMatrix::column(&f), PlayerMatrix::column(&x), PlayerMatrix::column(&alpha));
        let iv = feasible_gamma_interval(&f, &x, &alpha, b, delta).unwrap();
        let feasible_at = |g: f64| {
            f.dot(&x) - g * b <= delta
                && f.as_slice().iter().zip(alpha.as_slice()).all(|(fi, ai)| fi - g * ai >= 0.0)
        };
        let steps = 1_000_000;
        let step = 1e3 / steps as f64;
        let mut first = None;
        let mut last = None;
        for k in 0..=steps {
            let g = -1e3 + k as f64 * step;
            if feasible_at(g) {
                first.get_or_insert(g);
                last = Some(g);
            }
        }
        match (first, last) {
            (Some(lo), Some(hi)) => {
                prop_assert!(iv.feasible);
                prop_assert!(iv.hi <= 0.0);
                prop_assert!((iv.hi - hi).abs() <= step + 1e-9);
                if iv.lo > -1e3 {
                    prop_assert!((iv.lo - lo).abs() <= step + 1e-9);
                }
            }
            _ => prop_assert!(!iv.feasible || iv.hi < -1e3 || iv.hi - iv.lo < step),
        }
    }
}

#[test]
fn strongly_monotone_over_random_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 20 {
        let n = rng.random_range(2..=5);
        let params = QuadraticPayoffParams {
            l: (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
            h: (0..n).map(|_| rng.random_range(10.0..70.0)).collect(),
            q: rng.random_range(0.0..0.1),
            p0: rng.random_range(0.0..10.0),
        };
        let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let cfg = GameConfig::new(50.0, params, Some(beta.clone())).unwrap();
        let cert = cfg.payoff.monotonicity_certificate(&beta).unwrap();
        if !cert.is_strongly_monotone() {
            continue;
        }
        checked += 1;
        for _ in 0..1000 {
            let x = PlayerMatrix::column(&(0..n).map(|_| rng.random_range(-50.0..50.0)).collect::<Vec<_>>());
            let y = PlayerMatrix::column(&(0..n).map(|_| rng.random_range(-50.0..50.0)).collect::<Vec<_>>());
            let fx = cfg.payoff.pseudo_gradient(&x, &beta).unwrap();
            let fy = cfg.payoff.pseudo_gradient(&y, &beta).unwrap();
            let d = x.lin_comb(1.0, &y, -1.0);
            let lhs = fx.lin_comb(1.0, &fy, -1.0).dot(&d);
            let dist2 = d.dot(&d);
            assert!(lhs >= cert.mu * dist2 - 1e-9 * (1.0 + dist2));
            let df = fx.lin_comb(1.0, &fy, -1.0);
            assert!(df.dot(&df).sqrt() <= cert.lipschitz * dist2.sqrt() * (1.0 + 1e-12) + 1e-9);
        }
    }
}
