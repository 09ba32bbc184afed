//! Discriminators `xi = B + (1 - 2B) sigmoid(p)` with a tensor Legendre polynomial logit `p`.
//!
//! The affine squashing keeps every discriminator inside [B, 1 - B] regardless of its
//! coefficients.

use crate::error::{Error, Result};
use crate::numerics::{shifted_legendre, shifted_legendre_d1};

use super::DiscriminatorFn;

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    dim: usize,
    degree: usize,
    b: f64,
    coeffs: Vec<f64>,
}

pub fn sigmoid(p: f64) -> f64 {
    if p >= 0.0 {
        1.0 / (1.0 + (-p).exp())
    } else {
        let e = p.exp();
        e / (1.0 + e)
    }
}

/// Default per-axis degree: 6 on the line, 4 on the square.
pub fn default_degree(dim: usize) -> usize {
    if dim == 1 {
        6
    } else {
        4
    }
}

impl Discriminator {
    /// The constant discriminator 1/2.
    pub fn zero(dim: usize, degree: usize, b: f64) -> Result<Self> {
        let n = (degree + 1).pow(dim as u32);
        Self::new(dim, degree, b, vec![0.0; n])
    }

    pub fn new(dim: usize, degree: usize, b: f64, coeffs: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::input("discriminators are implemented for d in {1, 2}"));
        }
        if !(b > 0.0 && b < 0.5) {
            return Err(Error::input(format!("B = {b} must lie in (0, 1/2)")));
        }
        if coeffs.len() != (degree + 1).pow(dim as u32) {
            return Err(Error::input("coefficient count does not match the basis"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("discriminator coefficients must be finite"));
        }
        Ok(Discriminator { dim, degree, b, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn n_params(&self) -> usize {
        self.coeffs.len()
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.degree, self.b, coeffs)
    }

    /// Tensor basis values at `y`.
    pub fn basis(&self, y: &[f64], out: &mut [f64]) {
        basis_values(self.dim, self.degree, y, out);
    }

    pub fn logit(&self, y: &[f64]) -> f64 {
        let mut phi = vec![0.0; self.coeffs.len()];
        self.basis(y, &mut phi);
        phi.iter().zip(&self.coeffs).map(|(a, c)| a * c).sum()
    }

    /// Gradient of the logit in `y`.
    pub fn logit_grad(&self, y: &[f64]) -> Vec<f64> {
        let n = self.degree + 1;
        let mut v0 = vec![0.0; n];
        let mut d0 = vec![0.0; n];
        shifted_legendre_d1(y[0], &mut v0, &mut d0);
        if self.dim == 1 {
            return vec![d0.iter().zip(&self.coeffs).map(|(a, c)| a * c).sum()];
        }
        let mut v1 = vec![0.0; n];
        let mut d1 = vec![0.0; n];
        shifted_legendre_d1(y[1], &mut v1, &mut d1);
        let mut g = vec![0.0; 2];
        for a in 0..n {
            for b in 0..n {
                let c = self.coeffs[a * n + b];
                g[0] += c * d0[a] * v1[b];
                g[1] += c * v0[a] * d1[b];
            }
        }
        g
    }

    /// Gradient of `xi` in `y`.
    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        let s = sigmoid(self.logit(y));
        let f = (1.0 - 2.0 * self.b) * s * (1.0 - s);
        self.logit_grad(y).into_iter().map(|g| f * g).collect()
    }

    /// Certified bound on `sup |D xi|` from the coefficients.
    pub fn lipschitz_bound(&self) -> f64 {
        let n = self.degree + 1;
        // |P_m| <= 1 and |P_m'| <= m (m + 1) on [0, 1]
        let dmax = |m: usize| (m * (m + 1)) as f64;
        let mut s = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let g = if self.dim == 1 { dmax(i) } else { dmax(i / n).hypot(dmax(i % n)) };
            s += c.abs() * g;
        }
        0.25 * (1.0 - 2.0 * self.b) * s
    }

    /// Project the coefficients onto the box `[-bound, bound]`.
    pub fn clamp_coeffs(&mut self, bound: f64) {
        self.coeffs.iter_mut().for_each(|c| *c = c.clamp(-bound, bound));
    }

    pub fn to_text(&self) -> String {
        let v: Vec<String> = self.coeffs.iter().map(|x| x.to_string()).collect();
        format!("kind = discriminator\ndim = {}\ndegree = {}\nb = {}\ncoeffs = {}\n", self.dim, self.degree, self.b, v.join(" "))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = super::parse_key_values(text)?;
        if kv.get("kind").map(String::as_str) != Some("discriminator") {
            return Err(Error::input("parameter file is not a discriminator"));
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::input(format!("missing key {k}")));
        let bad = |k: &str| Error::input(format!("bad value for {k}"));
        Self::new(
            get("dim")?.parse().map_err(|_| bad("dim"))?,
            get("degree")?.parse().map_err(|_| bad("degree"))?,
            get("b")?.parse().map_err(|_| bad("b"))?,
            super::parse_floats(get("coeffs")?)?,
        )
    }
}

impl DiscriminatorFn for Discriminator {
    fn value(&self, y: &[f64]) -> f64 {
        self.b + (1.0 - 2.0 * self.b) * sigmoid(self.logit(y))
    }
}

fn basis_values(dim: usize, degree: usize, y: &[f64], out: &mut [f64]) {
    let n = degree + 1;
    if dim == 1 {
        shifted_legendre(y[0], &mut out[..n]);
        return;
    }
    let mut v0 = vec![0.0; n];
    let mut v1 = vec![0.0; n];
    shifted_legendre(y[0], &mut v0);
    shifted_legendre(y[1], &mut v1);
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] = v0[a] * v1[b];
        }
    }
}

/// `log xi` and `log(1 - xi)` with their first two derivatives in the logit `p`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogTerms {
    pub log_xi: f64,
    pub log_one_minus: f64,
    pub d_log_xi: f64,
    pub d_log_one_minus: f64,
    pub dd_log_xi: f64,
    pub dd_log_one_minus: f64,
}

pub(crate) fn log_terms(p: f64, b: f64) -> LogTerms {
    let s = sigmoid(p);
    let a = 1.0 - 2.0 * b;
    let xi = b + a * s;
    let om = 1.0 - xi;
    let ds = s * (1.0 - s);
    let dds = ds * (1.0 - 2.0 * s);
    let u = a * ds / xi;
    let v = a * ds / om;
    LogTerms {
        log_xi: xi.ln(),
        log_one_minus: om.ln(),
        d_log_xi: u,
        d_log_one_minus: -v,
        dd_log_xi: a * dds / xi - u * u,
        dd_log_one_minus: -a * dds / om - v * v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, unit_f64};

    fn random_disc(dim: usize, seed: u64) -> Discriminator {
        let mut rng = seeded_rng(seed, 8);
        let n = (default_degree(dim) + 1).pow(dim as u32);
        let c = (0..n).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect();
        Discriminator::new(dim, default_degree(dim), 0.1, c).unwrap()
    }

    #[test]
    fn values_stay_in_the_band() {
        let mut d = random_disc(1, 1);
        let big: Vec<f64> = d.coeffs().iter().map(|c| c * 1e4).collect();
        d = d.with_coeffs(big).unwrap();
        let mut rng = seeded_rng(2, 0);
        for _ in 0..1000 {
            let v = d.value(&[unit_f64(&mut rng)]);
            assert!((0.1..=0.9).contains(&v));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for dim in [1, 2] {
            let d = random_disc(dim, 3);
            let mut rng = seeded_rng(4, 1);
            for _ in 0..100 {
                let y: Vec<f64> = (0..dim).map(|_| 0.05 + 0.9 * unit_f64(&mut rng)).collect();
                let g = d.grad(&y);
                for j in 0..dim {
                    let h = 1e-5;
                    let mut yp = y.clone();
                    yp[j] += h;
                    let mut ym = y.clone();
                    ym[j] -= h;
                    let fd = (d.value(&yp) - d.value(&ym)) / (2.0 * h);
                    let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3);
                    assert!(rel < 1e-5, "rel err {rel}");
                }
            }
        }
    }

    #[test]
    fn lipschitz_bound_dominates_the_gradient() {
        for dim in [1, 2] {
            let d = random_disc(dim, 7);
            let bound = d.lipschitz_bound();
            let mut rng = seeded_rng(5, 2);
            for _ in 0..500 {
                let y: Vec<f64> = (0..dim).map(|_| unit_f64(&mut rng)).collect();
                let g = d.grad(&y);
                assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= bound);
            }
        }
    }

    #[test]
    fn log_term_derivatives() {
        for &p in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            let h = 1e-5;
            let (t, tp, tm) = (log_terms(p, 0.1), log_terms(p + h, 0.1), log_terms(p - h, 0.1));
            assert!(((tp.log_xi - tm.log_xi) / (2.0 * h) - t.d_log_xi).abs() < 1e-8);
            assert!(((tp.log_one_minus - tm.log_one_minus) / (2.0 * h) - t.d_log_one_minus).abs() < 1e-8);
            assert!(((tp.d_log_xi - tm.d_log_xi) / (2.0 * h) - t.dd_log_xi).abs() < 1e-7);
            assert!(((tp.d_log_one_minus - tm.d_log_one_minus) / (2.0 * h) - t.dd_log_one_minus).abs() < 1e-7);
        }
    }

    #[test]
    fn text_roundtrip() {
        let d = random_disc(2, 11);
        assert_eq!(Discriminator::from_text(&d.to_text()).unwrap(), d);
    }
}
