//! Hölder norms `||f||_{C^{k,alpha}} = max_{|beta|<=k} sup |D_beta f| + max_{|beta|=k} [D_beta f]_alpha`
//! estimated on grids and random point pairs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{horner, poly_derivative, seeded_rng, shifted_legendre_monomials, unit_f64};

use super::{MonotoneGenerator, Transport};

/// A vector field on [0, 1]^d with partial derivatives.
pub trait SmoothField: Sync {
    fn dim(&self) -> usize;
    fn components(&self) -> usize;
    fn value(&self, x: &[f64]) -> Vec<f64>;

    /// `D_beta f(x)` for every component. The default uses nested central differences.
    fn partial(&self, x: &[f64], beta: &[usize]) -> Vec<f64> {
        let order: usize = beta.iter().sum();
        if order == 0 {
            return self.value(x);
        }
        let h = match order {
            1 => 1e-6,
            2 => 1e-4,
            _ => 2e-3,
        };
        let j = beta.iter().position(|b| *b > 0).unwrap();
        let mut lower = beta.to_vec();
        lower[j] -= 1;
        // keep the stencil inside the unit cube
        let c = x[j].clamp(h * order as f64, 1.0 - h * order as f64);
        let mut xp = x.to_vec();
        xp[j] = c + h;
        let mut xm = x.to_vec();
        xm[j] = c - h;
        let a = self.partial(&xp, &lower);
        let b = self.partial(&xm, &lower);
        a.iter().zip(&b).map(|(p, m)| (p - m) / (2.0 * h)).collect()
    }
}

/// A closure-backed field using finite-difference derivatives.
pub struct FnField<F> {
    pub dim: usize,
    pub components: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> SmoothField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn components(&self) -> usize {
        self.components
    }
    fn value(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

/// Tensor-product polynomial field with analytic derivatives; coefficients are in the
/// shifted Legendre basis, `coeffs[j][a * n + b]` for component `j` in two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialField {
    dim: usize,
    degree: usize,
    /// Monomial coefficients per component, tensor layout.
    mono: Vec<Vec<f64>>,
}

impl PolynomialField {
    pub fn from_legendre(dim: usize, degree: usize, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let n = degree + 1;
        if !(1..=2).contains(&dim) || coeffs.iter().any(|c| c.len() != n.pow(dim as u32)) || coeffs.is_empty() {
            return Err(Error::input("polynomial field layout mismatch"));
        }
        let leg = shifted_legendre_monomials(n);
        let mono = coeffs
            .iter()
            .map(|c| {
                let mut out = vec![0.0; c.len()];
                if dim == 1 {
                    for (m, cm) in c.iter().enumerate() {
                        for (i, v) in leg[m].iter().enumerate() {
                            out[i] += cm * v;
                        }
                    }
                } else {
                    for a in 0..n {
                        for b in 0..n {
                            let cab = c[a * n + b];
                            for (i, va) in leg[a].iter().enumerate() {
                                for (k, vb) in leg[b].iter().enumerate() {
                                    out[i * n + k] += cab * va * vb;
                                }
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Ok(PolynomialField { dim, degree, mono })
    }

    /// Component `j` as its own field.
    pub fn component(&self, j: usize) -> PolynomialField {
        PolynomialField { dim: self.dim, degree: self.degree, mono: vec![self.mono[j].clone()] }
    }

    fn eval_mono(&self, c: &[f64], x: &[f64], beta: &[usize]) -> f64 {
        let n = self.degree + 1;
        let diff = |coef: &[f64], times: usize| {
            let mut p = coef.to_vec();
            for _ in 0..times {
                p = poly_derivative(&p);
            }
            p
        };
        if self.dim == 1 {
            return horner(&diff(c, beta[0]), x[0]);
        }
        // evaluate inner axis first
        let inner: Vec<f64> = (0..n).map(|i| horner(&diff(&c[i * n..(i + 1) * n], beta[1]), x[1])).collect();
        horner(&diff(&inner, beta[0]), x[0])
    }
}

impl SmoothField for PolynomialField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn components(&self) -> usize {
        self.mono.len()
    }
    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.partial(x, &vec![0; self.dim])
    }
    fn partial(&self, x: &[f64], beta: &[usize]) -> Vec<f64> {
        self.mono.iter().map(|c| self.eval_mono(c, x, beta)).collect()
    }
}

impl SmoothField for MonotoneGenerator {
    fn dim(&self) -> usize {
        Transport::dim(self)
    }
    fn components(&self) -> usize {
        Transport::dim(self)
    }
    fn value(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; Transport::dim(self)];
        self.forward(x, &mut y);
        y
    }
    fn partial(&self, x: &[f64], beta: &[usize]) -> Vec<f64> {
        if Transport::dim(self) == 1 {
            return vec![self.first_nth_derivative(x[0], beta[0])];
        }
        let order: usize = beta.iter().sum();
        if order == 0 {
            return self.value(x);
        }
        // the second coordinate is rational in z_1; fall back to central differences
        let fd = FnField { dim: 2, components: 2, f: |z: &[f64]| self.value(z) };
        fd.partial(x, beta)
    }
}

impl SmoothField for super::Discriminator {
    fn dim(&self) -> usize {
        super::Discriminator::dim(self)
    }
    fn components(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> Vec<f64> {
        vec![super::DiscriminatorFn::value(self, x)]
    }
    fn partial(&self, x: &[f64], beta: &[usize]) -> Vec<f64> {
        let order: usize = beta.iter().sum();
        match order {
            0 => self.value_vec(x),
            1 => {
                let j = beta.iter().position(|b| *b == 1).unwrap();
                vec![self.grad(x)[j]]
            }
            _ => {
                // differentiate the analytic gradient numerically
                let j = beta.iter().position(|b| *b > 0).unwrap();
                let mut lower = beta.to_vec();
                lower[j] -= 1;
                let h = if order == 2 { 1e-5 } else { 1e-3 };
                let mut xp = x.to_vec();
                xp[j] += h;
                let mut xm = x.to_vec();
                xm[j] -= h;
                let a = self.partial(&xp, &lower)[0];
                let b = self.partial(&xm, &lower)[0];
                vec![(a - b) / (2.0 * h)]
            }
        }
    }
}

impl super::Discriminator {
    fn value_vec(&self, x: &[f64]) -> Vec<f64> {
        vec![super::DiscriminatorFn::value(self, x)]
    }
}

/// Sampling effort for a Hölder norm estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderSampling {
    pub grid_per_axis: usize,
    pub random_pairs: usize,
    pub seed: u64,
}

impl Default for HolderSampling {
    fn default() -> Self {
        HolderSampling { grid_per_axis: 65, random_pairs: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderNorm {
    /// `max_{|beta| <= k} sup |D_beta f|` over the grid.
    pub ck: f64,
    /// Largest observed Hölder quotient of the k-th derivatives.
    pub holder: f64,
    /// `ck + holder`; every term is a sampled supremum, so this is a lower bound.
    pub lower: f64,
    /// Lower bound inflated by grid-gap and mean-value corrections; heuristic.
    pub upper: f64,
}

fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    if dim == 1 {
        return vec![vec![order]];
    }
    let mut out = Vec::new();
    for first in (0..=order).rev() {
        for mut rest in multi_indices(dim - 1, order - first) {
            let mut b = vec![first];
            b.append(&mut rest);
            out.push(b);
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Estimate the `C^{k,alpha}` norm of `field` on [0, 1]^d.
pub fn holder_norm<F: SmoothField + ?Sized>(field: &F, k: usize, alpha: f64, sampling: &HolderSampling) -> Result<HolderNorm> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::input("Hölder exponent must lie in (0, 1]"));
    }
    let d = field.dim();
    let g = sampling.grid_per_axis.max(2);
    let h = 1.0 / (g - 1) as f64;
    let points: Vec<Vec<f64>> = (0..g.pow(d as u32))
        .map(|mut idx| {
            let mut x = vec![0.0; d];
            for j in (0..d).rev() {
                x[j] = (idx % g) as f64 * h;
                idx /= g;
            }
            x
        })
        .collect();
    let mut ck: f64 = 0.0;
    let mut slope_corr: f64 = 0.0;
    for order in 0..=k {
        for beta in multi_indices(d, order) {
            let vals: Vec<Vec<f64>> = points.iter().map(|x| field.partial(x, &beta)).collect();
            let sup = vals.iter().map(|v| norm(v)).fold(0.0, f64::max);
            // grid-neighbor slopes bound how much the sup can exceed the grid maximum
            let lip = grid_slope(&vals, g, d, h);
            ck = ck.max(sup);
            slope_corr = slope_corr.max(sup + 1.5 * lip * h * (d as f64).sqrt() / 2.0);
        }
    }
    let mut holder: f64 = 0.0;
    let mut holder_up: f64 = 0.0;
    let mut rng = seeded_rng(sampling.seed, 0x686f_6c64);
    let diam = (d as f64).sqrt();
    for beta in multi_indices(d, k) {
        let vals: Vec<Vec<f64>> = points.iter().map(|x| field.partial(x, &beta)).collect();
        let lip = grid_slope(&vals, g, d, h);
        holder = holder.max(grid_holder(&vals, g, d, h, alpha));
        for _ in 0..sampling.random_pairs {
            let x: Vec<f64> = (0..d).map(|_| unit_f64(&mut rng)).collect();
            let y: Vec<f64> = if rng.gen_bool(0.5) {
                (0..d).map(|_| unit_f64(&mut rng)).collect()
            } else {
                x.iter().map(|v| (v + 0.05 * (unit_f64(&mut rng) - 0.5)).clamp(0.0, 1.0)).collect()
            };
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            let fx = field.partial(&x, &beta);
            let fy = field.partial(&y, &beta);
            let diff: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
            holder = holder.max(norm(&diff) / dist.powf(alpha));
        }
        holder_up = holder_up.max(1.5 * lip * diam.powf(1.0 - alpha));
    }
    let lower = ck + holder;
    Ok(HolderNorm { ck, holder, lower, upper: slope_corr.max(ck) + holder_up.max(holder) })
}

fn grid_slope(vals: &[Vec<f64>], g: usize, d: usize, h: f64) -> f64 {
    let mut s: f64 = 0.0;
    for idx in 0..vals.len() {
        let mut stride = 1;
        for _ in 0..d {
            let coord = (idx / stride) % g;
            if coord + 1 < g {
                let other = idx + stride;
                let diff: Vec<f64> = vals[idx].iter().zip(&vals[other]).map(|(a, b)| a - b).collect();
                s = s.max(norm(&diff) / h);
            }
            stride *= g;
        }
    }
    s
}

fn grid_holder(vals: &[Vec<f64>], g: usize, d: usize, h: f64, alpha: f64) -> f64 {
    grid_slope(vals, g, d, h) * h / h.powf(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{Discriminator, GeneratorShape};

    fn sampling() -> HolderSampling {
        HolderSampling { grid_per_axis: 33, random_pairs: 500, seed: 1 }
    }

    #[test]
    fn identity_and_constants() {
        let id = PolynomialField::from_legendre(1, 1, vec![vec![0.5, 0.5]]).unwrap();
        let n = holder_norm(&id, 1, 1.0, &sampling()).unwrap();
        assert!((n.lower - 1.0).abs() < 1e-12, "{n:?}");
        let c = PolynomialField::from_legendre(1, 0, vec![vec![-2.5]]).unwrap();
        let n = holder_norm(&c, 2, 0.5, &sampling()).unwrap();
        assert!((n.lower - 2.5).abs() < 1e-12);
    }

    #[test]
    fn norm_of_a_square() {
        // f = x^2: sup|f| = 1, sup|f'| = 2, f'' = 2 is constant so k = 2 adds no Hölder term
        let f = PolynomialField::from_legendre(1, 2, vec![vec![1.0 / 3.0, 0.5, 1.0 / 6.0]]).unwrap();
        let n2 = holder_norm(&f, 2, 1.0, &sampling()).unwrap();
        assert!((n2.lower - 2.0).abs() < 1e-9, "{n2:?}");
        // with k = 1 the Lipschitz constant of f' = 2x is 2
        let n1 = holder_norm(&f, 1, 1.0, &sampling()).unwrap();
        assert!((n1.lower - 4.0).abs() < 1e-9, "{n1:?}");
        assert!(n1.upper >= n1.lower);
    }

    #[test]
    fn component_norms_bracket_the_vector_norm() {
        let mut rng = seeded_rng(4, 4);
        for _ in 0..50 {
            let coeffs: Vec<Vec<f64>> = (0..3).map(|_| (0..9).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect()).collect();
            let f = PolynomialField::from_legendre(2, 2, coeffs).unwrap();
            let s = HolderSampling { grid_per_axis: 17, random_pairs: 200, seed: 2 };
            let whole = holder_norm(&f, 1, 0.5, &s).unwrap().lower;
            let parts: Vec<f64> = (0..3).map(|j| holder_norm(&f.component(j), 1, 0.5, &s).unwrap().lower).collect();
            let sum: f64 = parts.iter().sum();
            for p in &parts {
                assert!(*p <= whole + 1e-9 * whole.max(1.0), "component {p} above whole {whole}");
            }
            assert!(whole <= sum + 1e-9);
        }
    }

    #[test]
    fn analytic_and_numeric_generator_derivatives_agree() {
        let g = MonotoneGenerator::identity(GeneratorShape::default_for(1)).unwrap();
        let g = g.with_params(&[1.0, 0.3, -0.2, 0.1, 0.05, 0.0]).unwrap();
        let numeric = FnField { dim: 1, components: 1, f: |z: &[f64]| SmoothField::value(&g, z) };
        for &x in &[0.2, 0.5, 0.8] {
            for o in 1..=2 {
                let a = g.partial(&[x], &[o])[0];
                let b = numeric.partial(&[x], &[o])[0];
                assert!((a - b).abs() < 1e-4 * a.abs().max(1.0), "order {o}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn discriminator_norm_is_finite() {
        let d = Discriminator::new(1, 6, 0.1, vec![0.2, -0.3, 0.1, 0.0, 0.05, 0.0, 0.01]).unwrap();
        let n = holder_norm(&d, 1, 1.0, &sampling()).unwrap();
        assert!(n.lower.is_finite() && n.lower > 0.0 && n.upper >= n.lower);
    }

    #[test]
    fn multi_index_enumeration() {
        assert_eq!(multi_indices(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(multi_indices(1, 3), vec![vec![3]]);
    }
}
