//! Weighted point sets in discriminator feature space and the inner (discriminator)
//! maximization shared by training, model-error measurement and generalization searches.

use nalgebra::{DMatrix, DVector};

use crate::hypothesis::{log_terms, Discriminator, ModelConfig};
use crate::numerics::{shifted_legendre, shifted_legendre_d1};

/// Which log term a set contributes: `log xi` (data) or `log(1 - xi)` (generated).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Real,
    Fake,
}

/// Basis values at weighted points.
#[derive(Debug, Clone)]
pub(crate) struct BasisSet {
    pub nb: usize,
    pub basis: Vec<f64>,
    pub weights: Vec<f64>,
}

pub(crate) fn basis_len(dim: usize, degree: usize) -> usize {
    (degree + 1).pow(dim as u32)
}

/// Basis values at `y` and, when `grad` is non-empty, their `y`-gradients (`dim x nb`, row-major).
pub(crate) fn basis_at(dim: usize, degree: usize, y: &[f64], val: &mut [f64], grad: &mut [f64], scratch: &mut [f64]) {
    let n = degree + 1;
    if dim == 1 {
        if grad.is_empty() {
            shifted_legendre(y[0], &mut val[..n]);
        } else {
            shifted_legendre_d1(y[0], &mut val[..n], &mut grad[..n]);
        }
        return;
    }
    let (v0, rest) = scratch.split_at_mut(n);
    let (d0, rest) = rest.split_at_mut(n);
    let (v1, rest) = rest.split_at_mut(n);
    let d1 = &mut rest[..n];
    shifted_legendre_d1(y[0], v0, d0);
    shifted_legendre_d1(y[1], v1, d1);
    let nb = n * n;
    for a in 0..n {
        for b in 0..n {
            val[a * n + b] = v0[a] * v1[b];
            if !grad.is_empty() {
                grad[a * n + b] = d0[a] * v1[b];
                grad[nb + a * n + b] = v0[a] * d1[b];
            }
        }
    }
}

impl BasisSet {
    pub fn new(dim: usize, degree: usize, points: &[f64], weights: Vec<f64>) -> Self {
        let nb = basis_len(dim, degree);
        let m = weights.len();
        debug_assert_eq!(points.len(), m * dim);
        let mut basis = vec![0.0; m * nb];
        let mut scratch = vec![0.0; 4 * (degree + 1)];
        for k in 0..m {
            basis_at(dim, degree, &points[k * dim..(k + 1) * dim], &mut basis[k * nb..(k + 1) * nb], &mut [], &mut scratch);
        }
        BasisSet { nb, basis, weights }
    }

    pub fn uniform_weights(dim: usize, degree: usize, points: &[f64]) -> Self {
        let m = points.len() / dim;
        Self::new(dim, degree, points, vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.basis[k * self.nb..(k + 1) * self.nb]
    }

    /// Weighted sum of the side's log term at coefficients `c`.
    pub fn value(&self, side: Side, c: &[f64], b: f64) -> f64 {
        let mut v = 0.0;
        for k in 0..self.len() {
            let p = dot(self.row(k), c);
            let lt = log_terms(p, b);
            v += self.weights[k] * if side == Side::Real { lt.log_xi } else { lt.log_one_minus };
        }
        v
    }

    /// Add `scale *` (value, gradient, Hessian upper triangle) of the side's log term.
    pub fn accumulate(&self, side: Side, c: &[f64], b: f64, scale: f64, val: &mut f64, grad: &mut [f64], hess: Option<&mut [f64]>) {
        let nb = self.nb;
        let mut h = hess;
        for k in 0..self.len() {
            let row = self.row(k);
            let p = dot(row, c);
            let lt = log_terms(p, b);
            let (f, d1, d2) = match side {
                Side::Real => (lt.log_xi, lt.d_log_xi, lt.dd_log_xi),
                Side::Fake => (lt.log_one_minus, lt.d_log_one_minus, lt.dd_log_one_minus),
            };
            let w = scale * self.weights[k];
            *val += w * f;
            let wd = w * d1;
            for (g, r) in grad.iter_mut().zip(row) {
                *g += wd * r;
            }
            if let Some(h) = h.as_deref_mut() {
                let wdd = w * d2;
                for i in 0..nb {
                    let ri = wdd * row[i];
                    for j in i..nb {
                        h[i * nb + j] += ri * row[j];
                    }
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The discriminator family as a constraint set on logit coefficients.
#[derive(Debug, Clone)]
pub(crate) struct DiscConstraint {
    pub dim: usize,
    pub degree: usize,
    pub b: f64,
    /// Certified Lipschitz budget (C1).
    pub c1: f64,
    pub coeff_box: f64,
    lip_weights: Vec<f64>,
}

impl DiscConstraint {
    pub fn new(model: &ModelConfig, degree: usize, coeff_box: f64) -> Self {
        let dim = model.d;
        let n = degree + 1;
        let dmax = |m: usize| (m * (m + 1)) as f64;
        let lip_weights = (0..basis_len(dim, degree))
            .map(|i| if dim == 1 { dmax(i) } else { dmax(i / n).hypot(dmax(i % n)) })
            .map(|w| 0.25 * (1.0 - 2.0 * model.b) * w)
            .collect();
        DiscConstraint { dim, degree, b: model.b, c1: model.c1, coeff_box, lip_weights }
    }

    pub fn nb(&self) -> usize {
        self.lip_weights.len()
    }

    pub fn lipschitz(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.lip_weights).map(|(c, w)| c.abs() * w).sum()
    }

    /// Clamp to the box, then shrink the non-constant part onto the Lipschitz budget.
    pub fn project(&self, c: &mut [f64]) {
        c.iter_mut().for_each(|v| *v = v.clamp(-self.coeff_box, self.coeff_box));
        let l = self.lipschitz(c);
        if l > self.c1 {
            let s = self.c1 / l * (1.0 - 1e-12);
            for (v, w) in c.iter_mut().zip(&self.lip_weights) {
                if *w > 0.0 {
                    *v *= s;
                }
            }
        }
    }

    pub fn discriminator(&self, c: &[f64]) -> Discriminator {
        Discriminator::new(self.dim, self.degree, self.b, c.to_vec()).expect("constraint produces valid coefficients")
    }
}

/// `J(c) = (sum_real w log xi + sum_fake w log(1 - xi)) / 2` with gradient and Hessian.
fn objective(real: &BasisSet, fake: &BasisSet, c: &[f64], b: f64, with_hess: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let nb = real.nb;
    let mut val = 0.0;
    let mut grad = vec![0.0; nb];
    let mut hess = vec![0.0; if with_hess { nb * nb } else { 0 }];
    {
        let h = if with_hess { Some(hess.as_mut_slice()) } else { None };
        real.accumulate(Side::Real, c, b, 0.5, &mut val, &mut grad, h);
    }
    {
        let h = if with_hess { Some(hess.as_mut_slice()) } else { None };
        fake.accumulate(Side::Fake, c, b, 0.5, &mut val, &mut grad, h);
    }
    (val, grad, hess)
}

pub(crate) fn objective_value(real: &BasisSet, fake: &BasisSet, c: &[f64], b: f64) -> f64 {
    0.5 * (real.value(Side::Real, c, b) + fake.value(Side::Fake, c, b))
}

/// Damped projected Newton ascent on `J` starting from `c`; returns the final `J`.
pub(crate) fn inner_max(real: &BasisSet, fake: &BasisSet, cons: &DiscConstraint, c: &mut Vec<f64>, max_iter: usize) -> f64 {
    let nb = cons.nb();
    cons.project(c);
    let (mut val, mut grad, mut hess) = objective(real, fake, c, cons.b, true);
    for _ in 0..max_iter {
        if grad.iter().all(|g| g.abs() < 1e-13) {
            break;
        }
        let mut a = DMatrix::<f64>::zeros(nb, nb);
        for i in 0..nb {
            for j in i..nb {
                a[(i, j)] = -hess[i * nb + j];
                a[(j, i)] = -hess[i * nb + j];
            }
        }
        let scale = (0..nb).map(|i| a[(i, i)].abs()).fold(1e-300, f64::max);
        let g = DVector::from_column_slice(&grad);
        let mut shift = 0.0;
        let dir = loop {
            let mut m = a.clone();
            for i in 0..nb {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&g);
            }
            shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = c.iter().zip(dir.iter()).map(|(x, d)| x + t * d).collect();
            cons.project(&mut cand);
            let v = objective_value(real, fake, &cand, cons.b);
            if v > val {
                let gain = v - val;
                *c = cand;
                let (v2, g2, h2) = objective(real, fake, c, cons.b, true);
                val = v2;
                grad = g2;
                hess = h2;
                accepted = gain > 1e-15 * (1.0 + val.abs());
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    val
}

/// Plain projected gradient of `J` (used by descent-ascent).
pub(crate) fn objective_grad(real: &BasisSet, fake: &BasisSet, c: &[f64], b: f64) -> (f64, Vec<f64>) {
    let (v, g, _) = objective(real, fake, c, b, false);
    (v, g)
}
