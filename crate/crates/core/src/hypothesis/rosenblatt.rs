//! Triangular (Knothe-Rosenblatt) transport of the uniform measure onto a grid density,
//! and a least-squares fit of the generator family to it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measures::{jsd, GridDensity};
use crate::numerics::composite_gauss_unit;

use super::holder::{holder_norm, FnField, HolderSampling};
use super::{generator_density, GeneratorShape, ModelConfig, MonotoneGenerator, Transport};

/// Monotone cubic Hermite interpolant of a CDF on uniform knots `j / n`.
#[derive(Debug, Clone, PartialEq)]
struct CdfSpline {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CdfSpline {
    /// From cell averages of a density on `n` equal cells (mass normalized here).
    fn from_cells(cells: &[f64]) -> Self {
        let n = cells.len();
        let h = 1.0 / n as f64;
        let total: f64 = cells.iter().sum::<f64>() * h;
        let f: Vec<f64> = cells.iter().map(|c| c / total).collect();
        let mut values = vec![0.0; n + 1];
        for i in 0..n {
            values[i + 1] = values[i] + f[i] * h;
        }
        values[n] = 1.0;
        let mut slopes = vec![0.0; n + 1];
        if n == 1 {
            slopes = vec![f[0]; 2];
        } else {
            for j in 1..n {
                slopes[j] = 0.5 * (f[j - 1] + f[j]);
            }
            slopes[0] = (1.5 * f[0] - 0.5 * f[1]).max(0.0);
            slopes[n] = (1.5 * f[n - 1] - 0.5 * f[n - 2]).max(0.0);
        }
        // Fritsch-Carlson limiter keeps every segment monotone
        for j in 0..n {
            let delta = f[j];
            if delta <= 0.0 {
                slopes[j] = 0.0;
                slopes[j + 1] = 0.0;
                continue;
            }
            let a = slopes[j] / delta;
            let b = slopes[j + 1] / delta;
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[j] = t * a * delta;
                slopes[j + 1] = t * b * delta;
            }
        }
        CdfSpline { values, slopes }
    }

    fn n(&self) -> usize {
        self.values.len() - 1
    }

    fn segment(&self, y: f64) -> (usize, f64) {
        let n = self.n();
        let s = (y * n as f64).clamp(0.0, n as f64);
        let j = (s.floor() as usize).min(n - 1);
        (j, s - j as f64)
    }

    fn eval_seg(&self, j: usize, t: f64) -> (f64, f64) {
        let h = 1.0 / self.n() as f64;
        let (p0, p1) = (self.values[j], self.values[j + 1]);
        let (m0, m1) = (self.slopes[j] * h, self.slopes[j + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1;
        let dv = (6.0 * t2 - 6.0 * t) * p0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * p1 + (3.0 * t2 - 2.0 * t) * m1;
        (v, dv / h)
    }

    fn cdf(&self, y: f64) -> f64 {
        let (j, t) = self.segment(y);
        self.eval_seg(j, t).0
    }

    fn pdf(&self, y: f64) -> f64 {
        let (j, t) = self.segment(y);
        self.eval_seg(j, t).1
    }

    fn quantile(&self, z: f64) -> f64 {
        let z = z.clamp(0.0, 1.0);
        let n = self.n();
        let j = match self.values.binary_search_by(|v| v.partial_cmp(&z).unwrap()) {
            Ok(j) => return j as f64 / n as f64,
            Err(j) => j.clamp(1, n) - 1,
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let span = self.values[j + 1] - self.values[j];
        let mut t = if span > 0.0 { (z - self.values[j]) / span } else { 0.5 };
        let h = 1.0 / n as f64;
        for _ in 0..100 {
            let (v, dv) = self.eval_seg(j, t);
            let r = v - z;
            if r == 0.0 {
                break;
            }
            if r < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let step = r / (dv * h);
            let next = t - step;
            t = if dv > 0.0 && next >= lo && next <= hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 || step.abs() < 1e-16 {
                break;
            }
        }
        (j as f64 + t) * h
    }
}

/// Exact triangular transport `T` with `T_* Lebesgue = f`, stored through spline CDFs.
///
/// In two dimensions the conditional CDF of `y_2` is interpolated linearly in `y_1`
/// between row centers, so `T` is continuous and its density is piecewise smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    dim: usize,
    marginal: CdfSpline,
    conditional: Vec<CdfSpline>,
}

impl TransportMap {
    pub fn new(f: &GridDensity) -> Result<Self> {
        let res = f.resolution();
        match f.dim() {
            1 => Ok(TransportMap { dim: 1, marginal: CdfSpline::from_cells(f.values()), conditional: Vec::new() }),
            2 => {
                let (n1, n2) = (res[0], res[1]);
                let rows: Vec<&[f64]> = f.values().chunks(n2).collect();
                let marginal_cells: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / n2 as f64).collect();
                let conditional = rows.iter().map(|r| CdfSpline::from_cells(r)).collect();
                debug_assert_eq!(marginal_cells.len(), n1);
                Ok(TransportMap { dim: 2, marginal: CdfSpline::from_cells(&marginal_cells), conditional })
            }
            _ => Err(Error::input("Rosenblatt transport is implemented for d in {1, 2}")),
        }
    }

    /// Interpolation rows and weight for the conditional CDF at `y_1`.
    fn rows(&self, y1: f64) -> (usize, usize, f64) {
        let n = self.conditional.len();
        let s = (y1 * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let a = (s.floor() as usize).min(n - 1);
        let b = (a + 1).min(n - 1);
        (a, b, s - a as f64)
    }

    fn cond_cdf(&self, y1: f64, y2: f64) -> (f64, f64) {
        let (a, b, w) = self.rows(y1);
        let ca = &self.conditional[a];
        let cb = &self.conditional[b];
        ((1.0 - w) * ca.cdf(y2) + w * cb.cdf(y2), (1.0 - w) * ca.pdf(y2) + w * cb.pdf(y2))
    }

    fn cond_quantile(&self, y1: f64, z2: f64) -> f64 {
        let (a, b, w) = self.rows(y1);
        if a == b || w == 0.0 {
            return self.conditional[a].quantile(z2);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut y = (1.0 - w) * self.conditional[a].quantile(z2) + w * self.conditional[b].quantile(z2);
        for _ in 0..100 {
            let (v, dv) = self.cond_cdf(y1, y);
            let r = v - z2;
            if r == 0.0 {
                break;
            }
            if r < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let next = y - r / dv;
            y = if dv > 0.0 && next >= lo && next <= hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 || (r / dv).abs() < 1e-16 {
                break;
            }
        }
        y
    }

    /// Diagonal of the Jacobian of `T` at `z`.
    fn jacobian_diag(&self, z: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![1.0 / self.marginal.pdf(y[0]).max(1e-300)];
        if self.dim == 2 {
            out.push(1.0 / self.cond_cdf(y[0], y[1]).1.max(1e-300));
        }
        let _ = z;
        out
    }
}

impl Transport for TransportMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, z: &[f64], y: &mut [f64]) {
        y[0] = self.marginal.quantile(z[0]);
        if self.dim == 2 {
            y[1] = self.cond_quantile(y[0], z[1]);
        }
    }

    fn inverse(&self, y: &[f64], z: &mut [f64]) {
        z[0] = self.marginal.cdf(y[0]);
        if self.dim == 2 {
            z[1] = self.cond_cdf(y[0], y[1]).0;
        }
    }

    fn density(&self, y: &[f64]) -> f64 {
        let mut d = self.marginal.pdf(y[0]);
        if self.dim == 2 {
            d *= self.cond_cdf(y[0], y[1]).1;
        }
        d
    }
}

/// Result of fitting the generator family to the exact transport.
#[derive(Debug, Clone)]
pub struct RosenblattFit {
    pub transport: TransportMap,
    pub generator: MonotoneGenerator,
    /// `sup_z |phi(z) - T(z)|` on a fine grid.
    pub map_sup_error: f64,
    /// `jsd(f_phi, f)` on the input grid.
    pub jsd: f64,
    /// Sampled lower bounds on the generator and inverse norms.
    pub norm: f64,
    pub inverse_norm: f64,
}

struct FitProblem<'a> {
    transport: &'a TransportMap,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Target values and log-derivatives at every node.
    targets: Vec<(Vec<f64>, Vec<f64>)>,
}

impl FitProblem<'_> {
    fn residuals(&self, g: &MonotoneGenerator) -> Vec<f64> {
        let d = Transport::dim(g);
        let mut out = Vec::with_capacity(self.nodes.len() * 2 * d);
        let mut y = vec![0.0; d];
        for ((z, w), (ty, tl)) in self.nodes.iter().zip(&self.weights).zip(&self.targets) {
            g.forward(z, &mut y);
            let jd = g.jacobian_diag(z);
            let sw = w.sqrt();
            for j in 0..d {
                out.push(sw * (jd[j].ln() - tl[j]));
                out.push(sw * (y[j] - ty[j]));
            }
        }
        out
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt with a central-difference Jacobian.
fn levenberg_marquardt(problem: &FitProblem, start: MonotoneGenerator, iterations: usize) -> Result<MonotoneGenerator> {
    let mut g = start;
    let mut r = problem.residuals(&g);
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let p = g.n_params();
    for _ in 0..iterations {
        let theta = g.params();
        let mut jac = DMatrix::<f64>::zeros(r.len(), p);
        for k in 0..p {
            let h = 1e-6 * theta[k].abs().max(1.0);
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let rp = problem.residuals(&g.with_params(&tp)?);
            let rm = problem.residuals(&g.with_params(&tm)?);
            for i in 0..r.len() {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * DVector::from_vec(r.clone());
        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            let cg = g.with_params(&cand)?;
            let cr = problem.residuals(&cg);
            let cc = sum_sq(&cr);
            if cc.is_finite() && cc < cost {
                let rel = (cost - cc) / cost.max(1e-300);
                g = cg;
                r = cr;
                cost = cc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(g)
}

/// Build the exact transport onto `f` and fit a generator of the given shape to it.
///
/// Requires `f >= model.kappa` on the grid. The fitted generator must respect the model's
/// norm bounds `K` and `K_hat`; violations are reported as degenerate generators.
pub fn rosenblatt_transport(f: &GridDensity, shape: GeneratorShape, model: &ModelConfig) -> Result<RosenblattFit> {
    if f.dim() != shape.dim {
        return Err(Error::input("density and generator dimensions differ"));
    }
    if f.min_value() < model.kappa {
        return Err(Error::input(format!("density minimum {} is below kappa = {}", f.min_value(), model.kappa)));
    }
    let transport = TransportMap::new(f)?;
    let d = shape.dim;
    let (zn, zw) = if d == 1 { composite_gauss_unit(8, 16) } else { composite_gauss_unit(4, 6) };
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if d == 1 {
        for (z, w) in zn.iter().zip(&zw) {
            nodes.push(vec![*z]);
            weights.push(*w);
        }
    } else {
        for (z1, w1) in zn.iter().zip(&zw) {
            for (z2, w2) in zn.iter().zip(&zw) {
                nodes.push(vec![*z1, *z2]);
                weights.push(w1 * w2);
            }
        }
    }
    let targets = nodes
        .iter()
        .map(|z| {
            let mut y = vec![0.0; d];
            transport.forward(z, &mut y);
            let logs = transport.jacobian_diag(z, &y).iter().map(|v| v.ln()).collect();
            (y, logs)
        })
        .collect();
    let problem = FitProblem { transport: &transport, nodes, weights, targets };
    let generator = levenberg_marquardt(&problem, MonotoneGenerator::identity(shape)?, 200)?;

    let m: usize = if d == 1 { 4001 } else { 101 };
    let mut sup: f64 = 0.0;
    let mut y_t = vec![0.0; d];
    let mut y_g = vec![0.0; d];
    for idx in 0..m.pow(d as u32) {
        let z: Vec<f64> = if d == 1 { vec![idx as f64 / (m - 1) as f64] } else { vec![(idx / m) as f64 / (m - 1) as f64, (idx % m) as f64 / (m - 1) as f64] };
        problem.transport.forward(&z, &mut y_t);
        generator.forward(&z, &mut y_g);
        let e = y_t.iter().zip(&y_g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        sup = sup.max(e);
    }
    let fitted = generator_density(&generator, f.resolution())?;
    let divergence = jsd(&fitted, f)?;

    let sampling = HolderSampling { grid_per_axis: if d == 1 { 65 } else { 17 }, random_pairs: 300, seed: 0 };
    let k = model.k.min(if d == 1 { model.k } else { 2 });
    let norm = holder_norm(&generator, k, model.alpha, &sampling)?.lower;
    let inv = FnField {
        dim: d,
        components: d,
        f: |y: &[f64]| {
            let mut z = vec![0.0; y.len()];
            generator.inverse(&y.iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>(), &mut z);
            z
        },
    };
    let inverse_norm = holder_norm(&inv, k.min(2), model.alpha, &sampling)?.lower;
    if norm > model.big_k || inverse_norm > model.k_hat {
        return Err(Error::DegenerateGenerator(format!(
            "fitted generator norms {norm:.3e} / {inverse_norm:.3e} exceed K = {} / K_hat = {}",
            model.big_k, model.k_hat
        )));
    }
    Ok(RosenblattFit { transport, generator, map_sup_error: sup, jsd: divergence, norm, inverse_norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kappa: f64) -> ModelConfig {
        ModelConfig { kappa, ..ModelConfig::for_dim(1) }
    }

    #[test]
    fn uniform_density_gives_identity() {
        let f = GridDensity::uniform(vec![64]).unwrap();
        let fit = rosenblatt_transport(&f, GeneratorShape::default_for(1), &model(0.1)).unwrap();
        assert!(fit.map_sup_error < 1e-6, "{}", fit.map_sup_error);
        let mut y = [0.0];
        for i in 0..=100 {
            let z = i as f64 / 100.0;
            fit.transport.forward(&[z], &mut y);
            assert!((y[0] - z).abs() < 1e-12);
            fit.generator.forward(&[z], &mut y);
            assert!((y[0] - z).abs() < 1e-6);
        }
        assert!(fit.jsd < 1e-12);
    }

    #[test]
    fn linear_density_transport_is_square_root() {
        let f = GridDensity::tabulate(vec![200], |y| 2.0 * y[0]).unwrap();
        let t = TransportMap::new(&f).unwrap();
        let mut y = [0.0];
        let mut worst: f64 = 0.0;
        for i in 0..=2000 {
            let z = i as f64 / 2000.0;
            t.forward(&[z], &mut y);
            worst = worst.max((y[0] - z.sqrt()).abs());
        }
        assert!(worst < 1e-4, "sup error {worst}");
        for &yy in &[0.1, 0.37, 0.9] {
            assert!((t.density(&[yy]) - 2.0 * yy).abs() < 1e-9);
        }
        let mut z = [0.0];
        t.inverse(&[0.5], &mut z);
        assert!((z[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fitted_generator_pushes_forward_to_smooth_density() {
        let f = GridDensity::tabulate(vec![128], |y| 1.0 + 0.4 * (std::f64::consts::PI * y[0]).cos()).unwrap();
        let fit = rosenblatt_transport(&f, GeneratorShape::default_for(1), &model(0.1)).unwrap();
        assert!(fit.jsd < 1e-4, "jsd {}", fit.jsd);
        assert!(fit.map_sup_error < 1e-2, "sup {}", fit.map_sup_error);
    }

    #[test]
    fn low_density_is_rejected() {
        let f = GridDensity::tabulate(vec![64], |y| 2.0 * y[0]).unwrap();
        assert!(matches!(rosenblatt_transport(&f, GeneratorShape::default_for(1), &model(0.1)), Err(Error::Input(_))));
    }

    #[test]
    fn two_dimensional_transport_reproduces_density() {
        let f = GridDensity::tabulate(vec![32, 32], |y| (1.0 + 0.4 * y[0]) * (1.0 + 0.6 * y[0] * y[1])).unwrap();
        let t = TransportMap::new(&f).unwrap();
        let pushed = generator_density(&t, &[32, 32]).unwrap();
        assert!(jsd(&pushed, &f).unwrap() < 1e-5);
        let mut y = [0.0; 2];
        let mut z = [0.0; 2];
        t.forward(&[0.3, 0.7], &mut y);
        t.inverse(&y, &mut z);
        assert!((z[0] - 0.3).abs() < 1e-10 && (z[1] - 0.7).abs() < 1e-10);
        let model = ModelConfig::for_dim(2);
        let fit = rosenblatt_transport(&f, GeneratorShape::default_for(2), &model).unwrap();
        assert!(fit.jsd < 1e-3, "jsd {}", fit.jsd);
    }
}
