//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::needless_borrow)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, ToPrimitive, Zero};
use rand::Rng;
use rgne_core::lp::{LpProblem, RowSense};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Infeasible,
    Unbounded,
    Optimal(f64),
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting; `None`
/// when the system is (numerically) singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if buf.len() == k {
            f(buf);
            return;
        }
        for i in start..n {
            if n - i < k - buf.len() {
                break;
            }
            buf.push(i);
            rec(i + 1, n, k, buf, f);
            buf.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite data")
}

/// Exact solution of `A x = b` over the rationals; `None` if singular.
fn solve_exact(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<BigRational>> {
    let n = b.len();
    let mut m: Vec<Vec<BigRational>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| row.iter().map(|&v| rational(v)).chain([rational(rhs)]).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = &m[r][col] / &m[col][col];
                for c in col..=n {
                    let delta = &f * &m[col][c];
                    m[r][c] -= delta;
                }
            }
        }
    }
    Some((0..n).map(|r| &m[r][n] / &m[r][r]).collect())
}

fn dot_exact(row: &[f64], x: &[BigRational]) -> BigRational {
    row.iter().zip(x).fold(BigRational::zero(), |acc, (&a, b)| acc + rational(a) * b)
}

/// `min c^T x` over `G x <= h` by enumerating every vertex. Candidates are
/// screened in floating point and then re-solved, checked and scored in
/// exact rational arithmetic. Returns `None` if the set has no vertex,
/// otherwise the optimal value and one minimiser.
pub fn vertex_minimum(g: &[Vec<f64>], h: &[f64], c: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = c.len();
    let mut best: Option<(BigRational, Vec<BigRational>)> = None;
    combinations(g.len(), n, &mut |rows| {
        let a: Vec<Vec<f64>> = rows.iter().map(|&r| g[r].clone()).collect();
        let b: Vec<f64> = rows.iter().map(|&r| h[r]).collect();
        let Some(x) = solve_dense(a.clone(), b.clone()) else { return };
        let near = g.iter().zip(h).all(|(row, &rhs)| {
            let lhs: f64 = row.iter().zip(&x).map(|(p, q)| p * q).sum();
            lhs <= rhs + 1e-6 * (1.0 + rhs.abs())
        });
        if !near {
            return;
        }
        let Some(x) = solve_exact(&a, &b) else { return };
        if !g.iter().zip(h).all(|(row, &rhs)| dot_exact(row, &x) <= rational(rhs)) {
            return;
        }
        let v = dot_exact(c, &x);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, x));
        }
    });
    best.map(|(v, x)| (to_f64(&v), x.iter().map(to_f64).collect()))
}

/// Brute-force LP status and value. Infinite bounds are replaced by a box of
/// radius `R`; the problem is unbounded iff doubling `R` improves the value.
pub fn lp_oracle(p: &LpProblem) -> Outcome {
    const R: f64 = 1e8;
    let n = p.num_vars();
    let build = |radius: f64| {
        let mut g = Vec::new();
        let mut h = Vec::new();
        for r in 0..p.num_rows() {
            let row = p.row(r).to_vec();
            match p.sense(r) {
                RowSense::Le => {
                    g.push(row);
                    h.push(p.rhs(r));
                }
                RowSense::Ge => {
                    g.push(row.iter().map(|v| -v).collect());
                    h.push(-p.rhs(r));
                }
                RowSense::Eq => {
                    g.push(row.clone());
                    h.push(p.rhs(r));
                    g.push(row.iter().map(|v| -v).collect());
                    h.push(-p.rhs(r));
                }
            }
        }
        for j in 0..n {
            let (lo, hi) = p.bounds(j);
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            g.push(e.clone());
            h.push(if hi.is_finite() { hi } else { radius });
            e[j] = -1.0;
            g.push(e);
            h.push(if lo.is_finite() { -lo } else { radius });
        }
        (g, h)
    };
    let (g, h) = build(R);
    let Some((v1, x1)) = vertex_minimum(&g, &h, p.objective()) else {
        return Outcome::Infeasible;
    };
    if x1.iter().all(|v| v.abs() < 0.5 * R) {
        return Outcome::Optimal(v1);
    }
    let (g2, h2) = build(2.0 * R);
    let (v2, _) = vertex_minimum(&g2, &h2, p.objective()).expect("larger box stays feasible");
    if v2 < v1 - 1e-6 * (1.0 + v1.abs()) {
        Outcome::Unbounded
    } else {
        Outcome::Optimal(v1)
    }
}

/// Random LP with at most `max_vars` columns and `max_rows` rows on a small
/// integer grid, mixing all bound kinds and row senses.
pub fn random_lp<R: Rng>(rng: &mut R, max_vars: usize, max_rows: usize) -> LpProblem {
    let mut p = LpProblem::new();
    let n = rng.random_range(1..=max_vars);
    let m = rng.random_range(1..=max_rows);
    for j in 0..n {
        let cost = rng.random_range(-5..=5) as f64;
        let (lo, hi) = match rng.random_range(0..5) {
            0 => (f64::NEG_INFINITY, f64::INFINITY),
            1 => (0.0, f64::INFINITY),
            2 => {
                let lo = rng.random_range(-4..=2) as f64;
                (lo, lo + rng.random_range(0..=6) as f64)
            }
            3 => (f64::NEG_INFINITY, rng.random_range(-3..=3) as f64),
            _ => (rng.random_range(-3..=3) as f64, f64::INFINITY),
        };
        p.add_var(format!("x{j}"), lo, hi, cost);
    }
    for _ in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                coeffs.push((j, rng.random_range(-5..=5) as f64));
            }
        }
        let sense = match rng.random_range(0..5) {
            0 => RowSense::Eq,
            1 | 2 => RowSense::Ge,
            _ => RowSense::Le,
        };
        p.add_row(&coeffs, sense, rng.random_range(-10..=10) as f64);
    }
    p
}

/// `sum_{l <= N} C(M, l) eps^l (1 - eps)^(M - l)` in exact rationals, with
/// `eps = eps_num / eps_den`.
pub fn exact_binomial_tail(m: u64, n: u64, eps_num: u64, eps_den: u64) -> BigRational {
    let a = BigInt::from(eps_num);
    let rest = BigInt::from(eps_den - eps_num);
    let mut numer = BigInt::zero();
    let mut binom = BigInt::one();
    for l in 0..=n.min(m) {
        if l > 0 {
            binom = binom * BigInt::from(m - l + 1) / BigInt::from(l);
        }
        numer += &binom * (&a).pow(l as u32) * (&rest).pow((m - l) as u32);
    }
    BigRational::new(numer, BigInt::from(eps_den).pow(m as u32))
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("finite rational")
}
