mod support;

use rgne_core::bounds::binomial_tail;
use support::{exact_binomial_tail, to_f64};

#[test]
fn agrees_with_exact_rationals() {
    for (num, den) in [(1, 10), (1, 4), (1, 2), (3, 100)] {
        let eps = num as f64 / den as f64;
        for n in 0..=6u64 {
            for m in (0..=200u64).step_by(7) {
                let want = to_f64(&exact_binomial_tail(m, n, num, den));
                let got = binomial_tail(m, n, eps).unwrap();
                if want < 1e-300 {
                    assert!(got < 1e-290);
                    continue;
                }
                assert!(
                    ((got - want) / want).abs() <= 1e-12,
                    "M={m} N={n} eps={eps}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn nonincreasing_in_sample_count() {
    for n in [0u64, 1, 4, 10] {
        let mut last = binomial_tail(n, n, 0.1).unwrap();
        for m in n + 1..=500 {
            let v = binomial_tail(m, n, 0.1).unwrap();
            assert!(v <= last, "N={n} M={m}");
            last = v;
        }
    }
}

#[test]
fn large_sample_counts_stay_finite() {
    let v = binomial_tail(10_000, 4, 0.1).unwrap();
    assert!((0.0..1e-300).contains(&v));
    let v = binomial_tail(10_000, 1500, 0.1).unwrap();
    assert!(v > 0.0 && v <= 1.0);
}

#[test]
fn demand_response_column() {
    // eps = 0.1, N = 4; exact values rounded to four decimals.
    let expect = [
        (10, "0.9984"),
        (20, "0.9568"),
        (30, "0.8245"),
        (40, "0.6290"),
        (50, "0.4312"),
        (60, "0.2710"),
        (70, "0.1588"),
        (80, "0.0880"),
        (90, "0.0465"),
        (100, "0.0237"),
    ];
    for (m, s) in expect {
        let exact = to_f64(&exact_binomial_tail(m, 4, 1, 10));
        assert_eq!(format!("{exact:.4}"), s, "M={m}");
        assert_eq!(format!("{:.4}", binomial_tail(m, 4, 0.1).unwrap()), s, "M={m}");
    }
}
