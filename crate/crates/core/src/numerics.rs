//! Small numerical helpers: seeded streams, least squares lines, quadrature rules, polynomials.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic PRNG for `(seed, stream)`; distinct streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw on [0, 1) with 53 random bits.
pub fn unit_f64<R: rand::RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::input("line fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::input("line fit needs distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(LineFit { slope, intercept: my - slope * mx })
}

/// Gauss-Legendre nodes and weights mapped to [0, 1].
pub fn gauss_legendre_unit(order: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(NonZeroUsize::new(order.max(1)).unwrap());
    let mut pairs: Vec<(f64, f64)> =
        rule.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Composite Gauss-Legendre rule on [0, 1] with `panels` equal panels.
pub fn composite_gauss_unit(order: usize, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre_unit(order);
    let h = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(order * panels);
    let mut weights = Vec::with_capacity(order * panels);
    for p in 0..panels {
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push((p as f64 + xi) * h);
            weights.push(wi * h);
        }
    }
    (nodes, weights)
}

/// Adaptive Gauss-Legendre integration on [a, b] (10 vs 20 point comparison per panel).
pub fn adaptive_integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let coarse = GaussLegendre::new(NonZeroUsize::new(10).unwrap());
    let fine = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
    adaptive_step(f, a, b, tol, &coarse, &fine, 0)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    coarse: &GaussLegendre,
    fine: &GaussLegendre,
    depth: usize,
) -> f64 {
    let lo = coarse.integrate(a, b, f);
    let hi = fine.integrate(a, b, f);
    if (hi - lo).abs() <= tol || depth >= 40 {
        return hi;
    }
    let m = 0.5 * (a + b);
    adaptive_step(f, a, m, 0.5 * tol, coarse, fine, depth + 1)
        + adaptive_step(f, m, b, 0.5 * tol, coarse, fine, depth + 1)
}

/// Shifted Legendre polynomials `P_m(2t - 1)` for m < `order`, written into `out`.
pub fn shifted_legendre(t: f64, out: &mut [f64]) {
    let x = 2.0 * t - 1.0;
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for m in 2..out.len() {
        let mf = m as f64;
        out[m] = ((2.0 * mf - 1.0) * x * out[m - 1] - (mf - 1.0) * out[m - 2]) / mf;
    }
}

/// Values and first derivatives (in t) of the shifted Legendre polynomials.
pub fn shifted_legendre_d1(t: f64, val: &mut [f64], der: &mut [f64]) {
    let x = 2.0 * t - 1.0;
    let n = val.len();
    if n == 0 {
        return;
    }
    val[0] = 1.0;
    der[0] = 0.0;
    if n > 1 {
        val[1] = x;
        der[1] = 2.0;
    }
    for m in 2..n {
        let mf = m as f64;
        val[m] = ((2.0 * mf - 1.0) * x * val[m - 1] - (mf - 1.0) * val[m - 2]) / mf;
        // P'_m = P'_{m-2} + (2m - 1) P_{m-1}, in x; chain rule contributes the factor 2.
        der[m] = der[m - 2] + 2.0 * (2.0 * mf - 1.0) * val[m - 1];
    }
}

/// Monomial coefficients (ascending) of the shifted Legendre polynomials of degree < `order`.
pub fn shifted_legendre_monomials(order: usize) -> Vec<Vec<f64>> {
    // P_m(2t-1) = (-1)^m sum_k C(m,k) C(m+k,k) (-t)^k
    (0..order)
        .map(|m| {
            (0..=m)
                .map(|k| {
                    let sign = if (m + k) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * binom(m, k) * binom(m + k, k)
                })
                .collect()
        })
        .collect()
}

pub fn binom(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Antiderivative vanishing at 0.
pub fn poly_integral(a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + 1];
    for (i, x) in a.iter().enumerate() {
        out[i + 1] = x / (i + 1) as f64;
    }
    out
}

pub fn poly_derivative(a: &[f64]) -> Vec<f64> {
    if a.len() <= 1 {
        return vec![0.0];
    }
    a.iter().enumerate().skip(1).map(|(i, x)| x * i as f64).collect()
}

pub fn horner(a: &[f64], t: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let fit = fit_line(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 3.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre_unit(6);
        let s: f64 = x.iter().zip(&w).map(|(t, wt)| wt * t.powi(11)).sum();
        assert!((s - 1.0 / 12.0).abs() < 1e-14);
    }

    #[test]
    fn legendre_recurrence_matches_monomials() {
        let mono = shifted_legendre_monomials(7);
        let mut val = vec![0.0; 7];
        let mut der = vec![0.0; 7];
        for &t in &[0.0, 0.13, 0.5, 0.77, 1.0] {
            shifted_legendre_d1(t, &mut val, &mut der);
            for m in 0..7 {
                assert!((val[m] - horner(&mono[m], t)).abs() < 1e-10);
                assert!((der[m] - horner(&poly_derivative(&mono[m]), t)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adaptive_quadrature_handles_endpoint_singularity() {
        let f = |x: f64| x.powf(-0.5);
        let v = adaptive_integrate(&f, 0.0, 1.0, 1e-11);
        assert!((v - 2.0).abs() < 1e-6);
    }
}
