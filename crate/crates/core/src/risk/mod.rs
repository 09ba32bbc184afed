//! Risk functions of adversarial learning, minimax training, generalization errors and the
//! error-decomposition audit.

mod generalization;
mod inner;
mod train;

use std::f64::consts::LN_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hypothesis::{
    generator_density, rosenblatt_transport, Discriminator, DiscriminatorFn, GeneratorShape, ModelConfig, MonotoneGenerator, Transport,
};
use crate::measures::{jsd, GridDensity};
use crate::numerics::{composite_gauss_unit, seeded_rng, unit_f64};

pub use generalization::{generalization_error_lambda, generalization_error_mu, GenError, GenErrorConfig};
pub use train::{noise_samples, progress_csv, train_gal, Optimizer, ProgressRow, TrainConfig, TrainResult};

use inner::{inner_max, BasisSet, DiscConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskSource {
    Population,
    Empirical,
}

/// `L = (L_mu + L_lambda) / 2` together with its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskBreakdown {
    pub l: f64,
    pub l_mu: f64,
    pub l_lambda: f64,
    /// Sample count for empirical risks.
    pub n: Option<usize>,
    pub source: RiskSource,
}

impl RiskBreakdown {
    fn new(l_mu: f64, l_lambda: f64, n: Option<usize>, source: RiskSource) -> Self {
        RiskBreakdown { l: 0.5 * (l_mu + l_lambda), l_mu, l_lambda, n, source }
    }
}

/// A discriminator given by a closure.
pub struct FnDiscriminator<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> DiscriminatorFn for FnDiscriminator<F> {
    fn value(&self, y: &[f64]) -> f64 {
        (self.0)(y)
    }
}

/// Population risk on the grid of `f_mu`: both parts are midpoint sums in `y`, the noise part
/// against the tabulated density of the generator.
pub fn population_risk<T, D>(f_mu: &GridDensity, g: &T, xi: &D) -> Result<RiskBreakdown>
where
    T: Transport + ?Sized,
    D: DiscriminatorFn + ?Sized,
{
    if f_mu.dim() != g.dim() {
        return Err(Error::input("target and generator dimensions differ"));
    }
    let f_phi = generator_density(g, f_mu.resolution())?;
    let vol = f_mu.cell_volume();
    let mut l_mu = 0.0;
    let mut l_lambda = 0.0;
    for i in 0..f_mu.len() {
        let v = xi.value(&f_mu.center(i));
        l_mu += f_mu.values()[i] * vol * v.ln();
        l_lambda += f_phi.values()[i] * vol * (1.0 - v).ln();
    }
    Ok(RiskBreakdown::new(l_mu, l_lambda, None, RiskSource::Population))
}

/// Tensor Gauss nodes and weights on [0, 1]^dim (points row-major).
pub(crate) fn tensor_gauss(dim: usize, order: usize, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = composite_gauss_unit(order, panels);
    if dim == 1 {
        return (x, w);
    }
    let mut pts = Vec::with_capacity(2 * x.len() * x.len());
    let mut wts = Vec::with_capacity(x.len() * x.len());
    for (a, wa) in x.iter().zip(&w) {
        for (b, wb) in x.iter().zip(&w) {
            pts.push(*a);
            pts.push(*b);
            wts.push(wa * wb);
        }
    }
    (pts, wts)
}

/// Population risk by Gauss quadrature: `L_mu` in `y` against a density function, `L_lambda`
/// in the noise variable `z` through the generator.
pub fn population_risk_quadrature<F, T, D>(f_mu: F, g: &T, xi: &D, order: usize, panels: usize) -> Result<RiskBreakdown>
where
    F: Fn(&[f64]) -> f64,
    T: Transport + ?Sized,
    D: DiscriminatorFn + ?Sized,
{
    let d = g.dim();
    if order == 0 || panels == 0 {
        return Err(Error::input("quadrature needs a positive order and panel count"));
    }
    let (pts, wts) = tensor_gauss(d, order, panels);
    let mut l_mu = 0.0;
    let mut l_lambda = 0.0;
    let mut y = vec![0.0; d];
    for (k, w) in wts.iter().enumerate() {
        let p = &pts[k * d..(k + 1) * d];
        l_mu += w * f_mu(p) * xi.value(p).ln();
        g.forward(p, &mut y);
        l_lambda += w * (1.0 - xi.value(&y)).ln();
    }
    Ok(RiskBreakdown::new(l_mu, l_lambda, None, RiskSource::Population))
}

/// Sample means of `log xi(Y_i)` and `log(1 - xi(phi(Z_i)))` over row-major samples.
pub fn empirical_risk<T, D>(y: &[f64], z: &[f64], g: &T, xi: &D) -> Result<RiskBreakdown>
where
    T: Transport + ?Sized,
    D: DiscriminatorFn + ?Sized,
{
    let d = g.dim();
    if y.is_empty() || y.len() % d != 0 || y.len() != z.len() {
        return Err(Error::input("empirical risk needs equal, non-empty samples of the generator dimension"));
    }
    let n = y.len() / d;
    let l_mu = y.chunks_exact(d).map(|p| xi.value(p).ln()).sum::<f64>() / n as f64;
    let mut out = vec![0.0; d];
    let l_lambda = z
        .chunks_exact(d)
        .map(|p| {
            g.forward(p, &mut out);
            (1.0 - xi.value(&out)).ln()
        })
        .sum::<f64>()
        / n as f64;
    Ok(RiskBreakdown::new(l_mu, l_lambda, Some(n), RiskSource::Empirical))
}

/// Gap between the optimal risk `jsd - ln 2` and the best risk in the discriminator family for one probe generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGap {
    pub label: String,
    pub optimal: f64,
    pub family: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ModelErrors {
    /// `jsd(f_mu, f_phi)` for the transport fit.
    pub eps_model_g: f64,
    /// Largest probe gap.
    pub eps_model_d: f64,
    pub fit: MonotoneGenerator,
    pub probes: Vec<ProbeGap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorConfig {
    pub disc_degree: usize,
    pub disc_box: f64,
    pub inner_iterations: usize,
    pub random_probes: usize,
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for ModelErrorConfig {
    fn default() -> Self {
        ModelErrorConfig { disc_degree: 0, disc_box: 50.0, inner_iterations: 100, random_probes: 4, perturbation: 0.3, seed: 0 }
    }
}

/// Best risk of the discriminator family against generator density `f_phi`, on the grid.
pub fn family_best_risk(f_mu: &GridDensity, f_phi: &GridDensity, model: &ModelConfig, degree: usize, disc_box: f64, iterations: usize) -> Result<(f64, Discriminator)> {
    if f_mu.resolution() != f_phi.resolution() {
        return Err(Error::input("densities live on different grids"));
    }
    let d = f_mu.dim();
    let vol = f_mu.cell_volume();
    let pts: Vec<f64> = f_mu.centers().into_iter().flatten().collect();
    let real = BasisSet::new(d, degree, &pts, f_mu.values().iter().map(|v| v * vol).collect());
    let fake = BasisSet::new(d, degree, &pts, f_phi.values().iter().map(|v| v * vol).collect());
    let cons = DiscConstraint::new(model, degree, disc_box);
    let mut c = vec![0.0; cons.nb()];
    let v = inner_max(&real, &fake, &cons, &mut c, iterations);
    Ok((v, cons.discriminator(&c)))
}

fn probe_gap(label: &str, f_mu: &GridDensity, g: &MonotoneGenerator, model: &ModelConfig, degree: usize, cfg: &ModelErrorConfig) -> Result<ProbeGap> {
    let f_phi = generator_density(g, f_mu.resolution())?;
    let optimal = jsd(f_mu, &f_phi)? - LN_2;
    let (family, _) = family_best_risk(f_mu, &f_phi, model, degree, cfg.disc_box, cfg.inner_iterations)?;
    Ok(ProbeGap { label: label.to_string(), optimal, family, gap: (optimal - family).max(0.0) })
}

/// Measure both model errors: the generator side by a transport fit, the discriminator side
/// over probe generators (the fit, the identity, seeded perturbations and any `extra` ones).
pub fn measure_model_errors(
    f_mu: &GridDensity,
    shape: GeneratorShape,
    model: &ModelConfig,
    cfg: &ModelErrorConfig,
    extra: &[(&str, &MonotoneGenerator)],
) -> Result<ModelErrors> {
    let fit = rosenblatt_transport(f_mu, shape, model)?;
    let degree = if cfg.disc_degree == 0 { crate::hypothesis::default_degree(shape.dim) } else { cfg.disc_degree };
    let identity = MonotoneGenerator::identity(shape)?;
    let mut probes = vec![probe_gap("transport-fit", f_mu, &fit.generator, model, degree, cfg)?, probe_gap("identity", f_mu, &identity, model, degree, cfg)?];
    for (label, g) in extra {
        probes.push(probe_gap(label, f_mu, g, model, degree, cfg)?);
    }
    let mut rng = seeded_rng(cfg.seed, 0x7072_6f62);
    let base = identity.params();
    for r in 0..cfg.random_probes {
        let theta: Vec<f64> = base.iter().map(|t| t + cfg.perturbation * (2.0 * unit_f64(&mut rng) - 1.0)).collect();
        let g = identity.with_params(&theta)?;
        probes.push(probe_gap(&format!("random-{r}"), f_mu, &g, model, degree, cfg)?);
    }
    let eps_model_d = probes.iter().map(|p| p.gap).fold(0.0, f64::max);
    Ok(ModelErrors { eps_model_g: fit.jsd, eps_model_d, fit: fit.generator, probes })
}

/// Default audit tolerance.
pub const AUDIT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub jsd_achieved: f64,
    pub eps_model_g: f64,
    pub eps_model_d: f64,
    pub eps_gen_mu: f64,
    pub eps_gen_lambda: f64,
    pub tolerance: f64,
    /// `bound + tolerance - jsd_achieved`; negative when the audit fails.
    pub slack: f64,
    pub holds: bool,
}

impl DecompositionReport {
    pub fn bound(&self) -> f64 {
        self.eps_model_g + self.eps_model_d + self.eps_gen_mu + self.eps_gen_lambda
    }

    /// Turn a failed audit into an error.
    pub fn require(&self) -> Result<()> {
        if self.holds {
            Ok(())
        } else {
            Err(Error::Audit(format!(
                "jsd {:.6} exceeds the decomposition bound {:.6} by more than {}",
                self.jsd_achieved,
                self.bound(),
                self.tolerance
            )))
        }
    }
}

/// Compare the achieved divergence of `trained` with the sum of measured errors.
pub fn decomposition_audit<T: Transport + ?Sized>(
    f_mu: &GridDensity,
    trained: &T,
    eps_gen_mu: f64,
    eps_gen_lambda: f64,
    model_errors: &ModelErrors,
) -> Result<DecompositionReport> {
    let f_phi = generator_density(trained, f_mu.resolution())?;
    let jsd_achieved = jsd(f_mu, &f_phi)?;
    let parts = [eps_gen_mu, eps_gen_lambda, model_errors.eps_model_g, model_errors.eps_model_d];
    if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::input("error terms must be finite and nonnegative"));
    }
    let mut report = DecompositionReport {
        jsd_achieved,
        eps_model_g: model_errors.eps_model_g,
        eps_model_d: model_errors.eps_model_d,
        eps_gen_mu,
        eps_gen_lambda,
        tolerance: AUDIT_TOLERANCE,
        slack: 0.0,
        holds: false,
    };
    report.slack = report.bound() + report.tolerance - jsd_achieved;
    report.holds = report.slack >= 0.0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzCheckConfig {
    pub pairs: usize,
    pub seed: u64,
    /// Midpoint nodes per axis for the noise-side population integral.
    pub nodes: usize,
    pub n_empirical: usize,
    pub disc_degree: usize,
    pub generator_perturbation: f64,
}

impl Default for LipschitzCheckConfig {
    fn default() -> Self {
        LipschitzCheckConfig { pairs: 200, seed: 0, nodes: 2048, n_empirical: 100, disc_degree: 0, generator_perturbation: 0.5 }
    }
}

/// Labels of the four checked inequalities.
pub const LIPSCHITZ_CHECKS: [&str; 4] = ["population-mu", "population-lambda", "empirical-mu", "empirical-lambda"];

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub violations: [usize; 4],
    /// Largest `lhs / rhs` seen per inequality.
    pub worst_ratio: [f64; 4],
}

impl LipschitzReport {
    pub fn holds(&self) -> bool {
        self.violations.iter().all(|v| *v == 0)
    }
}

struct PairSide {
    g: MonotoneGenerator,
    xi: Discriminator,
}

fn sup_diff(points: &[f64], d: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    points.chunks_exact(d).map(|p| f(p).abs()).fold(0.0, f64::max)
}

/// Check `|L^mu(xi) - L^mu(xi')| <= ||xi - xi'|| / B` and
/// `|L^lambda(phi, xi) - L^lambda(phi', xi')| <= (||xi - xi'|| + C1 ||phi - phi'||) / B` on random pairs,
/// for population and empirical risks. Sup norms are taken over every point the risks evaluate.
pub fn lipschitz_bounds_check(f_mu: &GridDensity, shape: GeneratorShape, model: &ModelConfig, cfg: &LipschitzCheckConfig) -> Result<LipschitzReport> {
    if cfg.pairs == 0 || cfg.nodes == 0 || cfg.n_empirical == 0 {
        return Err(Error::input("pairs, nodes and sample size must be positive"));
    }
    let d = shape.dim;
    if f_mu.dim() != d {
        return Err(Error::input("target and generator dimensions differ"));
    }
    let degree = if cfg.disc_degree == 0 { crate::hypothesis::default_degree(d) } else { cfg.disc_degree };
    let cons = DiscConstraint::new(model, degree, 50.0);
    let identity = MonotoneGenerator::identity(shape)?;
    let base = identity.params();
    let mut rng = seeded_rng(cfg.seed, 0x6c69_70);

    let m = cfg.nodes;
    let znodes: Vec<f64> = if d == 1 {
        (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect()
    } else {
        let mut v = Vec::with_capacity(2 * m * m);
        for i in 0..m {
            for j in 0..m {
                v.push((i as f64 + 0.5) / m as f64);
                v.push((j as f64 + 0.5) / m as f64);
            }
        }
        v
    };
    let zw = 1.0 / (znodes.len() / d) as f64;
    let grid: Vec<f64> = f_mu.centers().into_iter().flatten().collect();
    let vol = f_mu.cell_volume();

    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<PairSide> {
        let theta: Vec<f64> = base.iter().map(|t| t + cfg.generator_perturbation * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let g = identity.with_params(&theta)?;
        let mut c: Vec<f64> = (0..cons.nb()).map(|_| 4.0 * rng.gen::<f64>() - 2.0).collect();
        cons.project(&mut c);
        Ok(PairSide { g, xi: cons.discriminator(&c) })
    };
    let push = |g: &MonotoneGenerator, z: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        for (a, b) in z.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            g.forward(a, b);
        }
        out
    };
    let l_lambda = |g_pts: &[f64], xi: &Discriminator, w: f64| -> f64 { g_pts.chunks_exact(d).map(|p| w * (1.0 - xi.value(p)).ln()).sum() };
    let l_mu = |xi: &Discriminator| -> f64 { grid.chunks_exact(d).zip(f_mu.values()).map(|(p, f)| f * vol * xi.value(p).ln()).sum() };

    let mut violations = [0usize; 4];
    let mut worst = [0.0f64; 4];
    let mut record = |k: usize, lhs: f64, rhs: f64| {
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 1e-14 { f64::INFINITY } else { 0.0 };
        worst[k] = worst[k].max(ratio);
        if lhs > rhs * (1.0 + 1e-12) + 1e-14 {
            violations[k] += 1;
        }
    };
    for _ in 0..cfg.pairs {
        let a = draw(&mut rng)?;
        let b = draw(&mut rng)?;
        let y: Vec<f64> = (0..cfg.n_empirical * d).map(|_| rng.gen::<f64>()).collect();
        let z: Vec<f64> = (0..cfg.n_empirical * d).map(|_| rng.gen::<f64>()).collect();
        let dxi = |pts: &[f64]| sup_diff(pts, d, |p| a.xi.value(p) - b.xi.value(p));
        let dphi = |pts: &[f64]| {
            pts.chunks_exact(d)
                .map(|p| {
                    let (mut u, mut v) = (vec![0.0; d], vec![0.0; d]);
                    a.g.forward(p, &mut u);
                    b.g.forward(p, &mut v);
                    u.iter().zip(&v).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max)
        };

        // population, mu side
        record(0, (l_mu(&a.xi) - l_mu(&b.xi)).abs(), dxi(&grid) / model.b);

        // population, noise side
        let (pa, pb) = (push(&a.g, &znodes), push(&b.g, &znodes));
        let xi_norm = dxi(&grid).max(dxi(&pa)).max(dxi(&pb));
        let phi_norm = dphi(&znodes).max(dphi(&grid));
        let lhs = (l_lambda(&pa, &a.xi, zw) - l_lambda(&pb, &b.xi, zw)).abs();
        record(1, lhs, (xi_norm + model.c1 * phi_norm) / model.b);

        // empirical, mu side
        let w = 1.0 / cfg.n_empirical as f64;
        let emp_mu = |xi: &Discriminator| -> f64 { y.chunks_exact(d).map(|p| w * xi.value(p).ln()).sum() };
        record(2, (emp_mu(&a.xi) - emp_mu(&b.xi)).abs(), dxi(&grid).max(dxi(&y)) / model.b);

        // empirical, noise side
        let (ea, eb) = (push(&a.g, &z), push(&b.g, &z));
        let xi_norm = dxi(&grid).max(dxi(&ea)).max(dxi(&eb));
        let phi_norm = dphi(&z).max(dphi(&grid));
        let lhs = (l_lambda(&ea, &a.xi, w) - l_lambda(&eb, &b.xi, w)).abs();
        record(3, lhs, (xi_norm + model.c1 * phi_norm) / model.b);
    }
    Ok(LipschitzReport { pairs: cfg.pairs, violations, worst_ratio: worst })
}
