//! Empirical minimax training of a generator against the discriminator family.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{log_terms, default_degree, Discriminator, GeneratorShape, ModelConfig, MonotoneGenerator, Transport};
use crate::numerics::{seeded_rng, unit_f64};

use super::inner::{basis_at, basis_len, dot, inner_max, objective_grad, BasisSet, DiscConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Inner Newton maximization over the discriminator, outer L-BFGS on the envelope gradient.
    BestResponse,
    /// Simultaneous gradient descent-ascent with fixed step sizes.
    DescentAscent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub restarts: usize,
    /// Outer iterations of the best-response optimizer.
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub gda_iterations: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub disc_steps: usize,
    /// Box on generator coefficients.
    pub generator_bound: f64,
    /// Box on discriminator logit coefficients (inside the Lipschitz budget).
    pub disc_box: f64,
    /// Size of the random perturbation of the identity for restarts after the first.
    pub perturbation: f64,
    pub min_n: usize,
    /// Progress rows are recorded every `log_every` iterations.
    pub log_every: usize,
    /// Discriminator degree per axis; 0 picks the default for the dimension.
    pub disc_degree: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::BestResponse,
            restarts: 4,
            outer_iterations: 300,
            inner_iterations: 60,
            gda_iterations: 20_000,
            lr_generator: 1e-2,
            lr_discriminator: 3e-2,
            disc_steps: 5,
            generator_bound: 4.0,
            disc_box: 50.0,
            perturbation: 0.3,
            min_n: 2,
            log_every: 10,
            disc_degree: 0,
        }
    }
}

impl TrainConfig {
    pub fn degree(&self, dim: usize) -> usize {
        if self.disc_degree == 0 {
            default_degree(dim)
        } else {
            self.disc_degree
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.outer_iterations == 0 || self.inner_iterations == 0 || self.log_every == 0 {
            return Err(Error::config("restarts and iteration counts must be positive"));
        }
        for (name, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("generator_bound", self.generator_bound),
            ("disc_box", self.disc_box),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::config("perturbation must be nonnegative"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressRow {
    pub restart: usize,
    pub iteration: usize,
    pub loss: f64,
    pub loss_mu: f64,
    pub loss_lambda: f64,
    pub grad_generator: f64,
    pub grad_discriminator: f64,
}

pub fn progress_csv(rows: &[ProgressRow]) -> String {
    let mut out = String::from("restart,iteration,loss,loss_mu,loss_lambda,grad_generator,grad_discriminator\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e}\n",
            r.restart, r.iteration, r.loss, r.loss_mu, r.loss_lambda, r.grad_generator, r.grad_discriminator
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub generator: MonotoneGenerator,
    pub discriminator: Discriminator,
    /// Inner-maximized empirical risk of the returned generator.
    pub objective: f64,
    pub restart: usize,
    pub restart_objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub progress: Vec<ProgressRow>,
}

/// Uniform noise samples `Z_1..Z_n` (row-major).
pub fn noise_samples(dim: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed, 0x6e6f_6973);
    (0..n * dim).map(|_| unit_f64(&mut rng)).collect()
}

/// The generator evaluated at weighted noise points, with discriminator features and derivatives.
pub(crate) struct FakeSide {
    pub set: BasisSet,
    /// `d basis / d y` at each point (`dim x nb` per point).
    basis_grad: Vec<f64>,
    /// `d phi / d theta` at each point (`dim x P` per point).
    jac: Vec<f64>,
    dim: usize,
    n_params: usize,
}

impl FakeSide {
    pub fn build(g: &MonotoneGenerator, degree: usize, noise: &[f64], weights: Vec<f64>, with_grad: bool) -> Self {
        let d = Transport::dim(g);
        let n = weights.len();
        let nb = basis_len(d, degree);
        let p = g.n_params();
        let mut ys = vec![0.0; n * d];
        let mut jac = vec![0.0; if with_grad { n * d * p } else { 0 }];
        for i in 0..n {
            let z = &noise[i * d..(i + 1) * d];
            if with_grad {
                g.apply_with_param_grad(z, &mut ys[i * d..(i + 1) * d], &mut jac[i * d * p..(i + 1) * d * p]);
            } else {
                g.forward(z, &mut ys[i * d..(i + 1) * d]);
            }
        }
        let mut basis = vec![0.0; n * nb];
        let mut basis_grad = vec![0.0; if with_grad { n * d * nb } else { 0 }];
        let mut scratch = vec![0.0; 4 * (degree + 1)];
        for i in 0..n {
            let grad: &mut [f64] = if with_grad { &mut basis_grad[i * d * nb..(i + 1) * d * nb] } else { &mut [] };
            basis_at(d, degree, &ys[i * d..(i + 1) * d], &mut basis[i * nb..(i + 1) * nb], grad, &mut scratch);
        }
        FakeSide { set: BasisSet { nb, basis, weights }, basis_grad, jac, dim: d, n_params: p }
    }

    /// `scale * d/dtheta sum_k w_k log(1 - xi_c(phi_theta(z_k)))`.
    pub fn generator_grad(&self, c: &[f64], b: f64, scale: f64) -> Vec<f64> {
        let d = self.dim;
        let nb = self.set.nb;
        let p = self.n_params;
        let mut out = vec![0.0; p];
        for i in 0..self.set.len() {
            let pval = dot(self.set.row(i), c);
            let lt = log_terms(pval, b);
            let w = scale * self.set.weights[i] * lt.d_log_one_minus;
            for j in 0..d {
                let bg = &self.basis_grad[(i * d + j) * nb..(i * d + j + 1) * nb];
                let dp = dot(bg, c);
                let row = &self.jac[(i * d + j) * p..(i * d + j + 1) * p];
                for (o, r) in out.iter_mut().zip(row) {
                    *o += w * dp * r;
                }
            }
        }
        out
    }
}

struct Problem<'a> {
    dim: usize,
    degree: usize,
    shape: GeneratorShape,
    real: BasisSet,
    noise: &'a [f64],
    cons: DiscConstraint,
    template: MonotoneGenerator,
    cfg: &'a TrainConfig,
}

impl Problem<'_> {
    fn fake(&self, g: &MonotoneGenerator, with_grad: bool) -> FakeSide {
        let n = self.noise.len() / self.dim;
        FakeSide::build(g, self.degree, self.noise, vec![1.0 / n as f64; n], with_grad)
    }

    /// `dJ/dtheta` at fixed discriminator coefficients.
    fn generator_grad(&self, fake: &FakeSide, c: &[f64]) -> Vec<f64> {
        fake.generator_grad(c, self.cons.b, 0.5)
    }

    fn clamp(&self, theta: &mut [f64]) {
        let b = self.cfg.generator_bound;
        theta.iter_mut().for_each(|t| *t = t.clamp(-b, b));
    }

    fn generator(&self, theta: &[f64]) -> Result<MonotoneGenerator> {
        self.template.with_params(theta)
    }

    /// Inner-maximized objective and its envelope gradient; `c` is warm-started and updated.
    fn envelope(&self, theta: &[f64], c: &mut Vec<f64>) -> Result<(f64, Vec<f64>)> {
        let g = self.generator(theta)?;
        let fake = self.fake(&g, true);
        let v = inner_max(&self.real, &fake.set, &self.cons, c, self.cfg.inner_iterations);
        if !v.is_finite() {
            return Err(Error::Training(format!("non-finite inner objective at theta = {theta:?}")));
        }
        Ok((v, self.generator_grad(&fake, c)))
    }

    fn log_row(&self, restart: usize, iteration: usize, theta: &[f64], c: &[f64], grad_g: f64) -> Result<ProgressRow> {
        let g = self.generator(theta)?;
        let fake = self.fake(&g, false);
        let lmu = self.real.value(super::inner::Side::Real, c, self.cons.b);
        let llam = fake.set.value(super::inner::Side::Fake, c, self.cons.b);
        let (_, gd) = objective_grad(&self.real, &fake.set, c, self.cons.b);
        Ok(ProgressRow {
            restart,
            iteration,
            loss: 0.5 * (lmu + llam),
            loss_mu: lmu,
            loss_lambda: llam,
            grad_generator: grad_g,
            grad_discriminator: norm_inf(&gd),
        })
    }

    fn start(&self, restart: usize, seed: u64) -> Vec<f64> {
        let mut theta = MonotoneGenerator::identity(self.shape).expect("valid shape").params();
        if restart > 0 {
            let mut rng = seeded_rng(seed, 0x7374_6172 + restart as u64);
            theta.iter_mut().for_each(|t| *t += self.cfg.perturbation * (2.0 * rng.gen::<f64>() - 1.0));
        }
        self.clamp(&mut theta);
        theta
    }

    fn best_response(&self, restart: usize, seed: u64) -> Result<Run> {
        let mut theta = self.start(restart, seed);
        let mut c = vec![0.0; self.cons.nb()];
        let (mut v, mut g) = self.envelope(&theta, &mut c)?;
        let mut progress = vec![self.log_row(restart, 0, &theta, &c, norm_inf(&g))?];
        let mut mem: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut stall = 0;
        for it in 1..=self.cfg.outer_iterations {
            iterations = it;
            if norm_inf(&g) < 1e-10 {
                converged = true;
                break;
            }
            let mut dir = lbfgs_direction(&g, &mem);
            let mut slope = dot(&g, &dir);
            if slope >= 0.0 {
                mem.clear();
                dir = g.iter().map(|x| -x).collect();
                slope = -dot(&g, &g);
            }
            let mut t = if mem.is_empty() { (0.1 / norm_inf(&dir)).min(1.0) } else { 1.0 };
            let mut accepted = None;
            for _ in 0..30 {
                let mut cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                self.clamp(&mut cand);
                let mut cc = c.clone();
                let (cv, cg) = self.envelope(&cand, &mut cc)?;
                if cv <= v + 1e-4 * t * slope {
                    accepted = Some((cand, cc, cv, cg));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, cc, cv, cg)) = accepted else {
                converged = true;
                break;
            };
            let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = cg.iter().zip(&g).map(|(a, b)| a - b).collect();
            if dot(&s, &y) > 1e-14 {
                mem.push((s, y));
                if mem.len() > 8 {
                    mem.remove(0);
                }
            }
            let gain = v - cv;
            theta = cand;
            c = cc;
            v = cv;
            g = cg;
            if it % self.cfg.log_every == 0 {
                progress.push(self.log_row(restart, it, &theta, &c, norm_inf(&g))?);
            }
            stall = if gain < 1e-13 { stall + 1 } else { 0 };
            if stall >= 3 {
                converged = true;
                break;
            }
        }
        progress.push(self.log_row(restart, iterations, &theta, &c, norm_inf(&g))?);
        Ok(Run { theta, c, objective: v, iterations, converged, progress })
    }

    fn descent_ascent(&self, restart: usize, seed: u64) -> Result<Run> {
        let mut theta = self.start(restart, seed);
        let mut c = vec![0.0; self.cons.nb()];
        let mut progress = Vec::new();
        let mut last_g = 0.0;
        for it in 0..self.cfg.gda_iterations {
            let g = self.generator(&theta)?;
            let fake = self.fake(&g, true);
            for _ in 0..self.cfg.disc_steps {
                let (_, gd) = objective_grad(&self.real, &fake.set, &c, self.cons.b);
                for (ci, gi) in c.iter_mut().zip(&gd) {
                    *ci += self.cfg.lr_discriminator * gi;
                }
                self.cons.project(&mut c);
            }
            let gg = self.generator_grad(&fake, &c);
            if gg.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("descent-ascent diverged at iteration {it}")));
            }
            last_g = norm_inf(&gg);
            for (t, gi) in theta.iter_mut().zip(&gg) {
                *t -= self.cfg.lr_generator * gi;
            }
            self.clamp(&mut theta);
            if it % self.cfg.log_every == 0 {
                progress.push(self.log_row(restart, it, &theta, &c, last_g)?);
            }
        }
        // report the inner-maximized loss so restarts compare on the same footing
        let g = self.generator(&theta)?;
        let fake = self.fake(&g, false);
        let v = inner_max(&self.real, &fake.set, &self.cons, &mut c, self.cfg.inner_iterations);
        progress.push(self.log_row(restart, self.cfg.gda_iterations, &theta, &c, last_g)?);
        Ok(Run { theta, c, objective: v, iterations: self.cfg.gda_iterations, converged: v.is_finite(), progress })
    }
}

struct Run {
    theta: Vec<f64>,
    c: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    progress: Vec<ProgressRow>,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn lbfgs_direction(g: &[f64], mem: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y) in mem.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push((a, rho));
    }
    if let Some((s, y)) = mem.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Solve `min_phi max_xi L_hat(phi, xi, n)` for data `y` and noise `z` (both row-major, `n x d`).
///
/// Restarts run in parallel; the generator with the lowest inner-maximized objective wins, and
/// the lowest restart index wins exact ties.
pub fn train_gal(y: &[f64], z: &[f64], shape: GeneratorShape, model: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<TrainResult> {
    model.validate()?;
    cfg.validate()?;
    let d = shape.dim;
    if d != model.d {
        return Err(Error::config("generator shape and model dimension differ"));
    }
    if y.len() % d != 0 || y.len() != z.len() {
        return Err(Error::input("data and noise must have equal counts"));
    }
    let n = y.len() / d;
    if n < cfg.min_n.max(1) {
        return Err(Error::input(format!("n = {n} is below the minimum {}", cfg.min_n)));
    }
    if y.iter().chain(z).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::input("samples must lie in [0, 1]^d"));
    }
    let degree = cfg.degree(d);
    let problem = Problem {
        dim: d,
        degree,
        shape,
        real: BasisSet::uniform_weights(d, degree, y),
        noise: z,
        cons: DiscConstraint::new(model, degree, cfg.disc_box),
        template: MonotoneGenerator::identity(shape)?,
        cfg,
    };
    let runs: Vec<Result<Run>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| match cfg.optimizer {
            Optimizer::BestResponse => problem.best_response(r, seed),
            Optimizer::DescentAscent => problem.descent_ascent(r, seed),
        })
        .collect();
    let mut best: Option<(usize, Run)> = None;
    let mut objectives = Vec::with_capacity(runs.len());
    let mut progress = Vec::new();
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                objectives.push(run.objective);
                progress.extend(run.progress.iter().cloned());
                let better = match &best {
                    None => true,
                    Some((_, b)) => run.objective < b.objective,
                };
                if run.objective.is_finite() && better {
                    best = Some((r, run));
                }
            }
            Err(e) => {
                objectives.push(f64::NAN);
                failures.push(format!("restart {r}: {e}"));
            }
        }
    }
    let Some((restart, run)) = best else {
        return Err(Error::Training(format!("every restart failed: {}", failures.join("; "))));
    };
    Ok(TrainResult {
        generator: problem.generator(&run.theta)?,
        discriminator: problem.cons.discriminator(&run.c),
        objective: run.objective,
        restart,
        restart_objectives: objectives,
        iterations: run.iterations,
        converged: run.converged,
        progress,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::generator_density;
    use crate::measures::{jsd, GridDensity};

    fn sample_from(n: usize, seed: u64, inverse_cdf: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, 11);
        (0..n).map(|_| inverse_cdf(unit_f64(&mut rng))).collect()
    }

    #[test]
    fn uniform_target_keeps_the_identity() {
        let y = sample_from(4096, 1, |u| u);
        let z = noise_samples(1, 4096, 2);
        let model = ModelConfig::for_dim(1);
        let cfg = TrainConfig { restarts: 2, ..TrainConfig::default() };
        let res = train_gal(&y, &z, GeneratorShape::default_for(1), &model, &cfg, 0).unwrap();
        let f = generator_density(&res.generator, &[512]).unwrap();
        let u = GridDensity::uniform(vec![512]).unwrap();
        assert!(jsd(&f, &u).unwrap() < 0.01);
    }

    #[test]
    fn linear_density_is_learned() {
        let n = 1 << 14;
        let y = sample_from(n, 3, |u| u.sqrt());
        let z = noise_samples(1, n, 4);
        let model = ModelConfig::for_dim(1);
        let res = train_gal(&y, &z, GeneratorShape::default_for(1), &model, &TrainConfig::default(), 5).unwrap();
        let f = generator_density(&res.generator, &[512]).unwrap();
        let target = GridDensity::tabulate(vec![512], |y| 2.0 * y[0]).unwrap();
        let div = jsd(&target, &f).unwrap();
        assert!(div < 0.02, "jsd {div}");
        assert!(res.progress.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn training_is_reproducible() {
        let y = sample_from(512, 7, |u| u.sqrt());
        let z = noise_samples(1, 512, 8);
        let model = ModelConfig::for_dim(1);
        let cfg = TrainConfig { restarts: 3, ..TrainConfig::default() };
        let a = train_gal(&y, &z, GeneratorShape::default_for(1), &model, &cfg, 9).unwrap();
        let b = train_gal(&y, &z, GeneratorShape::default_for(1), &model, &cfg, 9).unwrap();
        assert_eq!(a.generator.params(), b.generator.params());
        assert_eq!(progress_csv(&a.progress), progress_csv(&b.progress));
    }

    #[test]
    fn descent_ascent_makes_progress() {
        let n = 1024;
        let y = sample_from(n, 3, |u| u.sqrt());
        let z = noise_samples(1, n, 4);
        let model = ModelConfig::for_dim(1);
        let cfg = TrainConfig { optimizer: Optimizer::DescentAscent, restarts: 1, gda_iterations: 3000, lr_generator: 0.1, lr_discriminator: 0.3, ..TrainConfig::default() };
        let res = train_gal(&y, &z, GeneratorShape::default_for(1), &model, &cfg, 1).unwrap();
        let f = generator_density(&res.generator, &[256]).unwrap();
        let target = GridDensity::tabulate(vec![256], |y| 2.0 * y[0]).unwrap();
        let u = GridDensity::uniform(vec![256]).unwrap();
        assert!(jsd(&target, &f).unwrap() < 0.5 * jsd(&target, &u).unwrap());
    }

    #[test]
    fn two_dimensional_training_runs() {
        let n = 600;
        let mut rng = seeded_rng(1, 1);
        let y: Vec<f64> = (0..2 * n).map(|_| unit_f64(&mut rng).sqrt()).collect();
        let z = noise_samples(2, n, 2);
        let model = ModelConfig::for_dim(2);
        let cfg = TrainConfig { restarts: 1, outer_iterations: 40, ..TrainConfig::default() };
        let res = train_gal(&y, &z, GeneratorShape::default_for(2), &model, &cfg, 0).unwrap();
        assert!(res.objective.is_finite());
    }

    #[test]
    fn rejects_bad_input() {
        let model = ModelConfig::for_dim(1);
        let cfg = TrainConfig::default();
        assert!(train_gal(&[0.5], &[0.5, 0.2], GeneratorShape::default_for(1), &model, &cfg, 0).is_err());
        assert!(train_gal(&[1.5, 0.2], &[0.5, 0.2], GeneratorShape::default_for(1), &model, &cfg, 0).is_err());
    }
}
