//! Triangular monotone generators built from squared polynomials.
//!
//! Coordinate `j` of the generator is `phi_j(z) = F(z_j) / F(1)` with
//! `F(t) = integral_0^t (p(s)^2 + floor * S) ds` and `S = integral_0^1 p^2`, so each coordinate
//! map fixes 0 and 1, depends on `p` only up to scale, and has derivative at least
//! `floor / (1 + floor)`. In two dimensions the polynomial of the second
//! coordinate depends on `z_1` through a tensor Legendre basis.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{horner, poly_derivative, poly_integral, poly_mul, shifted_legendre, shifted_legendre_monomials};

use super::Transport;

pub const DEFAULT_FLOOR: f64 = 0.05;

/// Integrals `I_km(t) = integral_0^t P_k P_m` of shifted Legendre products, as monomials.
#[derive(Debug)]
pub(crate) struct Tables {
    order: usize,
    pair: Vec<Vec<Vec<f64>>>,
}

impl Tables {
    pub(crate) fn new(order: usize) -> Self {
        let mono = shifted_legendre_monomials(order);
        let pair = (0..order)
            .map(|k| (0..order).map(|m| poly_integral(&poly_mul(&mono[k], &mono[m]))).collect())
            .collect();
        Tables { order, pair }
    }
}

/// One coordinate map for a fixed coefficient vector.
#[derive(Debug, Clone)]
pub(crate) struct Map1d {
    f: Vec<f64>,
    df: Vec<f64>,
    f1: f64,
    /// `dF/de_m` as polynomials, present when parameter gradients are requested.
    g: Vec<Vec<f64>>,
    g1: Vec<f64>,
}

impl Map1d {
    pub(crate) fn new(t: &Tables, e: &[f64], floor: f64, with_grad: bool) -> Self {
        let len = 2 * t.order;
        let mut f = vec![0.0; len];
        let mut g = if with_grad { vec![vec![0.0; len]; t.order] } else { Vec::new() };
        for k in 0..t.order {
            for m in 0..t.order {
                let poly = &t.pair[k][m];
                let w = e[k] * e[m];
                for (i, c) in poly.iter().enumerate() {
                    f[i] += w * c;
                }
                if with_grad {
                    for (i, c) in poly.iter().enumerate() {
                        g[m][i] += 2.0 * e[k] * c;
                    }
                }
            }
        }
        let s = horner(&f, 1.0);
        f[1] += floor * s + 1e-300;
        for gm in g.iter_mut() {
            let gm1 = horner(gm, 1.0);
            gm[1] += floor * gm1;
        }
        let f1 = horner(&f, 1.0);
        let g1 = g.iter().map(|p| horner(p, 1.0)).collect();
        let df = poly_derivative(&f);
        Map1d { f, df, f1, g, g1 }
    }

    pub(crate) fn value(&self, z: f64) -> f64 {
        horner(&self.f, z) / self.f1
    }

    pub(crate) fn derivative(&self, z: f64) -> f64 {
        horner(&self.df, z) / self.f1
    }

    pub(crate) fn nth_derivative(&self, z: f64, n: usize) -> f64 {
        let mut p = self.f.clone();
        for _ in 0..n {
            p = poly_derivative(&p);
        }
        horner(&p, z) / self.f1
    }

    /// `d phi / d e_m` at `z`, given `phi(z)`.
    pub(crate) fn param_grad(&self, z: f64, phi: f64, out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = (horner(&self.g[m], z) - phi * self.g1[m]) / self.f1;
        }
    }

    pub(crate) fn inverse(&self, y: f64) -> f64 {
        let target = y * self.f1;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut z = y.clamp(0.0, 1.0);
        for _ in 0..200 {
            let fz = horner(&self.f, z) - target;
            if fz == 0.0 {
                return z;
            }
            if fz < 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let d = horner(&self.df, z);
            let newton = z - fz / d;
            z = if newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-16 || (fz / d).abs() < 1e-17 {
                break;
            }
        }
        z
    }
}

/// A triangular generator on [0, 1]^d, d in {1, 2}.
#[derive(Debug, Clone)]
pub struct MonotoneGenerator {
    dim: usize,
    order: usize,
    cond_order: usize,
    floor: f64,
    coeffs: Vec<Vec<f64>>,
    tables: Arc<Tables>,
    first: Arc<Map1d>,
}

impl PartialEq for MonotoneGenerator {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.order == other.order
            && self.cond_order == other.cond_order
            && self.floor == other.floor
            && self.coeffs == other.coeffs
    }
}

/// Sizes of a generator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorShape {
    pub dim: usize,
    /// Legendre coefficients per monotone coordinate map.
    pub order: usize,
    /// Legendre terms in `z_1` for the second coordinate (d = 2 only).
    pub cond_order: usize,
}

impl GeneratorShape {
    pub fn default_for(dim: usize) -> Self {
        match dim {
            1 => GeneratorShape { dim: 1, order: 6, cond_order: 1 },
            _ => GeneratorShape { dim, order: 4, cond_order: 2 },
        }
    }
}

impl MonotoneGenerator {
    /// The identity map: `p = 1` in every coordinate.
    pub fn identity(shape: GeneratorShape) -> Result<Self> {
        let mut coeffs = vec![vec![0.0; shape.order]];
        coeffs[0][0] = 1.0;
        if shape.dim == 2 {
            let mut c = vec![0.0; shape.cond_order * shape.order];
            c[0] = 1.0;
            coeffs.push(c);
        }
        Self::new(shape, DEFAULT_FLOOR, coeffs)
    }

    pub fn new(shape: GeneratorShape, floor: f64, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if !(1..=2).contains(&shape.dim) {
            return Err(Error::input("generators are implemented for d in {1, 2}"));
        }
        if shape.order == 0 || shape.cond_order == 0 {
            return Err(Error::input("generator basis orders must be positive"));
        }
        if !(floor > 0.0) {
            return Err(Error::input("generator derivative floor must be positive"));
        }
        if coeffs.len() != shape.dim
            || coeffs[0].len() != shape.order
            || (shape.dim == 2 && coeffs[1].len() != shape.order * shape.cond_order)
        {
            return Err(Error::input("coefficient layout does not match the generator shape"));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::input("generator coefficients must be finite"));
        }
        let tables = Arc::new(Tables::new(shape.order));
        let first = Arc::new(Map1d::new(&tables, &coeffs[0], floor, true));
        Ok(MonotoneGenerator { dim: shape.dim, order: shape.order, cond_order: shape.cond_order, floor, coeffs, tables, first })
    }

    pub fn shape(&self) -> GeneratorShape {
        GeneratorShape { dim: self.dim, order: self.order, cond_order: self.cond_order }
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn n_params(&self) -> usize {
        self.coeffs.iter().map(|c| c.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_params() {
            return Err(Error::input("parameter count mismatch"));
        }
        let mut coeffs = Vec::with_capacity(self.dim);
        let mut off = 0;
        for c in &self.coeffs {
            coeffs.push(params[off..off + c.len()].to_vec());
            off += c.len();
        }
        Self::new(self.shape(), self.floor, coeffs)
    }

    /// Coefficients of the second coordinate's polynomial in `t` at a given `z_1`.
    fn conditional_coeffs(&self, z1: f64) -> Vec<f64> {
        let mut pa = vec![0.0; self.cond_order];
        shifted_legendre(z1, &mut pa);
        let c = &self.coeffs[1];
        (0..self.order)
            .map(|b| (0..self.cond_order).map(|a| c[a * self.order + b] * pa[a]).sum())
            .collect()
    }

    pub(crate) fn second_map(&self, z1: f64, with_grad: bool) -> Map1d {
        Map1d::new(&self.tables, &self.conditional_coeffs(z1), self.floor, with_grad)
    }

    /// Diagonal of the (triangular) Jacobian at `z`.
    pub fn jacobian_diag(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![self.first.derivative(z[0])];
        if self.dim == 2 {
            out.push(self.second_map(z[0], false).derivative(z[1]));
        }
        out
    }

    /// Evaluate `phi(z)` and `d phi_j / d theta` (row-major, `dim x n_params`).
    pub fn apply_with_param_grad(&self, z: &[f64], y: &mut [f64], grad: &mut [f64]) {
        let p = self.n_params();
        grad.iter_mut().for_each(|g| *g = 0.0);
        y[0] = self.first.value(z[0]);
        self.first.param_grad(z[0], y[0], &mut grad[..self.order]);
        if self.dim == 2 {
            let m2 = self.second_map(z[0], true);
            y[1] = m2.value(z[1]);
            let mut ge = vec![0.0; self.order];
            m2.param_grad(z[1], y[1], &mut ge);
            let mut pa = vec![0.0; self.cond_order];
            shifted_legendre(z[0], &mut pa);
            let row = &mut grad[p..2 * p];
            for a in 0..self.cond_order {
                for b in 0..self.order {
                    row[self.order + a * self.order + b] = pa[a] * ge[b];
                }
            }
        }
    }

    /// Derivatives of coordinate maps used by the analytic Hölder norm (d = 1).
    pub(crate) fn first_nth_derivative(&self, z: f64, n: usize) -> f64 {
        self.first.nth_derivative(z, n)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("kind = generator\n");
        out.push_str(&format!("dim = {}\norder = {}\ncond_order = {}\nfloor = {}\n", self.dim, self.order, self.cond_order, self.floor));
        for (j, c) in self.coeffs.iter().enumerate() {
            let v: Vec<String> = c.iter().map(|x| x.to_string()).collect();
            out.push_str(&format!("map{j} = {}\n", v.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = super::parse_key_values(text)?;
        if kv.get("kind").map(String::as_str) != Some("generator") {
            return Err(Error::input("parameter file is not a generator"));
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k).ok_or_else(|| Error::input(format!("missing key {k}")))?.parse().map_err(|_| Error::input(format!("bad value for {k}")))
        };
        let shape = GeneratorShape { dim: num("dim")? as usize, order: num("order")? as usize, cond_order: num("cond_order")? as usize };
        let mut coeffs = Vec::new();
        for j in 0..shape.dim {
            let raw = kv.get(&format!("map{j}")).ok_or_else(|| Error::input(format!("missing key map{j}")))?;
            coeffs.push(super::parse_floats(raw)?);
        }
        Self::new(shape, num("floor")?, coeffs)
    }
}

impl Transport for MonotoneGenerator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, z: &[f64], y: &mut [f64]) {
        y[0] = self.first.value(z[0]);
        if self.dim == 2 {
            y[1] = self.second_map(z[0], false).value(z[1]);
        }
    }

    fn inverse(&self, y: &[f64], z: &mut [f64]) {
        z[0] = self.first.inverse(y[0]);
        if self.dim == 2 {
            z[1] = self.second_map(z[0], false).inverse(y[1]);
        }
    }

    fn density(&self, y: &[f64]) -> f64 {
        let mut z = vec![0.0; self.dim];
        self.inverse(y, &mut z);
        1.0 / self.jacobian_diag(&z).iter().product::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, unit_f64};

    fn random_generator(shape: GeneratorShape, seed: u64, scale: f64) -> MonotoneGenerator {
        let mut rng = seeded_rng(seed, 5);
        let mut g = MonotoneGenerator::identity(shape).unwrap().params();
        g.iter_mut().for_each(|c| *c += scale * (2.0 * unit_f64(&mut rng) - 1.0));
        MonotoneGenerator::identity(shape).unwrap().with_params(&g).unwrap()
    }

    #[test]
    fn identity_generator_is_the_identity() {
        for dim in [1, 2] {
            let g = MonotoneGenerator::identity(GeneratorShape::default_for(dim)).unwrap();
            let z = vec![0.37; dim];
            let mut y = vec![0.0; dim];
            g.forward(&z, &mut y);
            for v in &y {
                assert!((v - 0.37).abs() < 1e-13);
            }
            assert!((g.density(&y) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoints_are_fixed() {
        for seed in 0..20 {
            let g = random_generator(GeneratorShape::default_for(1), seed, 1.0);
            let mut y = [0.0];
            g.forward(&[0.0], &mut y);
            assert_eq!(y[0], 0.0);
            g.forward(&[1.0], &mut y);
            assert!((y[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_roundtrip() {
        for dim in [1, 2] {
            for seed in 0..10 {
                let g = random_generator(GeneratorShape::default_for(dim), seed, 0.8);
                let mut rng = seeded_rng(seed, 6);
                for _ in 0..100 {
                    let z: Vec<f64> = (0..dim).map(|_| unit_f64(&mut rng)).collect();
                    let mut y = vec![0.0; dim];
                    let mut back = vec![0.0; dim];
                    g.forward(&z, &mut y);
                    g.inverse(&y, &mut back);
                    // z-space accuracy is limited by the conditioning where phi' is small
                    let mut again = vec![0.0; dim];
                    g.forward(&back, &mut again);
                    for j in 0..dim {
                        let ok = (back[j] - z[j]).abs() < 1e-9 || (again[j] - y[j]).abs() < 1e-12;
                        assert!(ok, "{z:?} -> {y:?} -> {back:?} -> {again:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        for dim in [1, 2] {
            let g = random_generator(GeneratorShape::default_for(dim), 3, 0.5);
            let p = g.n_params();
            let z: Vec<f64> = (0..dim).map(|j| 0.3 + 0.4 * j as f64).collect();
            let mut y = vec![0.0; dim];
            let mut grad = vec![0.0; dim * p];
            g.apply_with_param_grad(&z, &mut y, &mut grad);
            let theta = g.params();
            for i in 0..p {
                let h = 1e-6;
                let mut tp = theta.clone();
                tp[i] += h;
                let mut tm = theta.clone();
                tm[i] -= h;
                let (mut yp, mut ym) = (vec![0.0; dim], vec![0.0; dim]);
                g.with_params(&tp).unwrap().forward(&z, &mut yp);
                g.with_params(&tm).unwrap().forward(&z, &mut ym);
                for j in 0..dim {
                    let fd = (yp[j] - ym[j]) / (2.0 * h);
                    assert!((fd - grad[j * p + i]).abs() < 1e-7, "dim {dim} param {i} coord {j}: {fd} vs {}", grad[j * p + i]);
                }
            }
        }
    }

    #[test]
    fn text_roundtrip() {
        let g = random_generator(GeneratorShape::default_for(2), 9, 0.4);
        assert_eq!(MonotoneGenerator::from_text(&g.to_text()).unwrap(), g);
    }
}
