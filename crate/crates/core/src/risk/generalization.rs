//! Direct estimates of the generalization errors
//! `sup_xi |L_hat^mu(xi, n) - L^mu(xi)|` and `sup_{phi, xi} |L_hat^lambda - L^lambda|`.
//!
//! Both suprema are searched by multi-start projected gradient ascent (both signs of the
//! difference) plus a fixed net of discriminators; the results are lower bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{GeneratorShape, ModelConfig, MonotoneGenerator};
use crate::measures::GridDensity;
use crate::numerics::{composite_gauss_unit, seeded_rng};

use super::inner::{BasisSet, DiscConstraint, Side};
use super::train::FakeSide;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenErrorConfig {
    pub restarts: usize,
    pub iterations: usize,
    pub net_size: usize,
    pub seed: u64,
    /// Gauss order and panels per axis for the noise-side population integral.
    pub quad_order: usize,
    pub quad_panels: usize,
    pub generator_bound: f64,
    pub disc_box: f64,
    pub disc_degree: usize,
}

impl Default for GenErrorConfig {
    fn default() -> Self {
        GenErrorConfig { restarts: 8, iterations: 80, net_size: 64, seed: 0, quad_order: 8, quad_panels: 64, generator_bound: 4.0, disc_box: 50.0, disc_degree: 0 }
    }
}

impl GenErrorConfig {
    fn degree(&self, dim: usize) -> usize {
        if self.disc_degree == 0 {
            crate::hypothesis::default_degree(dim)
        } else {
            self.disc_degree
        }
    }

    fn validate(&self) -> Result<()> {
        if self.restarts < 1 || self.iterations < 1 {
            return Err(Error::config("generalization search needs restarts and iterations"));
        }
        Ok(())
    }
}

/// A generalization-error estimate with the values found by each search component.
#[derive(Debug, Clone, PartialEq)]
pub struct GenError {
    pub value: f64,
    pub net_value: f64,
    /// Best value per ascent restart (maximum over both signs).
    pub ascent_values: Vec<f64>,
}

/// Random logit coefficients spread over the Lipschitz budget.
fn random_coeffs<R: Rng>(rng: &mut R, cons: &DiscConstraint) -> Vec<f64> {
    let mut c: Vec<f64> = (0..cons.nb()).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
    let l = cons.lipschitz(&c).max(1e-300);
    let target = cons.c1 * rng.gen::<f64>().sqrt();
    c.iter_mut().for_each(|v| *v *= target / l);
    c[0] = 0.0;
    cons.project(&mut c);
    c
}

/// The fixed net: single basis functions at four budget levels and both signs, then seeded
/// random directions at the full budget.
fn net(cons: &DiscConstraint, size: usize) -> Vec<Vec<f64>> {
    let nb = cons.nb();
    let mut out = Vec::with_capacity(size);
    'levels: for level in [1.0, 0.75, 0.5, 0.25] {
        for m in 1..nb {
            for sign in [1.0, -1.0] {
                if out.len() >= size {
                    break 'levels;
                }
                let mut c = vec![0.0; nb];
                c[m] = 1.0;
                let l = cons.lipschitz(&c);
                c[m] = sign * level * cons.c1 / l;
                cons.project(&mut c);
                out.push(c);
            }
        }
    }
    let mut rng = seeded_rng(0x6e65_74, 0);
    while out.len() < size {
        let mut c: Vec<f64> = (0..nb).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        c[0] = 0.0;
        let l = cons.lipschitz(&c);
        c.iter_mut().for_each(|v| *v *= cons.c1 / l);
        cons.project(&mut c);
        out.push(c);
    }
    out
}

/// Projected gradient ascent with Armijo backtracking; returns the best value reached.
fn ascend<F, P>(x: &mut Vec<f64>, iterations: usize, f: F, project: P) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&mut [f64]),
{
    project(x);
    let (mut v, mut g) = f(x);
    let mut t = 1.0 / g.iter().fold(1e-12, |m: f64, a| m.max(a.abs()));
    for _ in 0..iterations {
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + t * b).collect();
            project(&mut cand);
            let step: f64 = cand.iter().zip(x.iter()).zip(&g).map(|((c, a), b)| (c - a) * b).sum();
            let (cv, cg) = f(&cand);
            if cv >= v + 1e-4 * step && step > 0.0 {
                let gain = cv - v;
                *x = cand;
                v = cv;
                g = cg;
                accepted = gain > 1e-15;
                t *= 2.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    v
}

/// `eps_gen^mu`: `y` holds the data (row-major), `f_mu` the target density on a grid.
pub fn generalization_error_mu(y: &[f64], f_mu: &GridDensity, model: &ModelConfig, cfg: &GenErrorConfig) -> Result<GenError> {
    cfg.validate()?;
    let d = f_mu.dim();
    if d != model.d || y.is_empty() || y.len() % d != 0 {
        return Err(Error::input("data must be a non-empty row-major sample of the model dimension"));
    }
    let degree = cfg.degree(d);
    let n = y.len() / d;
    let centers = f_mu.centers();
    let mut points = y.to_vec();
    let mut weights = vec![1.0 / n as f64; n];
    let vol = f_mu.cell_volume();
    for (cpt, f) in centers.iter().zip(f_mu.values()) {
        points.extend_from_slice(cpt);
        weights.push(-f * vol);
    }
    let set = BasisSet::new(d, degree, &points, weights);
    let cons = DiscConstraint::new(model, degree, cfg.disc_box);
    let eval = |c: &[f64], sign: f64| -> (f64, Vec<f64>) {
        let mut v = 0.0;
        let mut g = vec![0.0; c.len()];
        set.accumulate(Side::Real, c, model.b, sign, &mut v, &mut g, None);
        (v, g)
    };
    let net_value = net(&cons, cfg.net_size).iter().map(|c| set.value(Side::Real, c, model.b).abs()).fold(0.0, f64::max);
    let mut rng = seeded_rng(cfg.seed, 0x6d75);
    let starts: Vec<Vec<f64>> = (0..cfg.restarts).map(|_| random_coeffs(&mut rng, &cons)).collect();
    let ascent_values: Vec<f64> = starts
        .iter()
        .map(|c0| {
            [1.0, -1.0]
                .iter()
                .map(|&s| {
                    let mut c = c0.clone();
                    ascend(&mut c, cfg.iterations, |x| eval(x, s), |x| cons.project(x))
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let value = ascent_values.iter().copied().fold(net_value, f64::max);
    Ok(GenError { value, net_value, ascent_values })
}

/// `eps_gen^lambda` for noise samples `z` (row-major), searching generators and discriminators jointly.
pub fn generalization_error_lambda(z: &[f64], shape: GeneratorShape, model: &ModelConfig, cfg: &GenErrorConfig) -> Result<GenError> {
    cfg.validate()?;
    let d = shape.dim;
    if d != model.d || z.is_empty() || z.len() % d != 0 {
        return Err(Error::input("noise must be a non-empty row-major sample of the model dimension"));
    }
    let degree = cfg.degree(d);
    let n = z.len() / d;
    let (nodes, w) = composite_gauss_unit(cfg.quad_order, cfg.quad_panels);
    let mut points = z.to_vec();
    let mut weights = vec![1.0 / n as f64; n];
    if d == 1 {
        points.extend_from_slice(&nodes);
        weights.extend(w.iter().map(|v| -v));
    } else {
        for (a, wa) in nodes.iter().zip(&w) {
            for (b, wb) in nodes.iter().zip(&w) {
                points.push(*a);
                points.push(*b);
                weights.push(-wa * wb);
            }
        }
    }
    let template = MonotoneGenerator::identity(shape)?;
    let p = template.n_params();
    let cons = DiscConstraint::new(model, degree, cfg.disc_box);
    let nb = cons.nb();
    let gb = cfg.generator_bound;
    let eval = |x: &[f64], sign: f64| -> (f64, Vec<f64>) {
        let Ok(g) = template.with_params(&x[..p]) else {
            return (f64::NEG_INFINITY, vec![0.0; x.len()]);
        };
        let fake = FakeSide::build(&g, degree, &points, weights.clone(), true);
        let c = &x[p..];
        let mut v = 0.0;
        let mut gc = vec![0.0; nb];
        fake.set.accumulate(Side::Fake, c, model.b, sign, &mut v, &mut gc, None);
        let mut grad = fake.generator_grad(c, model.b, sign);
        grad.extend(gc);
        (v, grad)
    };
    let project = |x: &mut [f64]| {
        x[..p].iter_mut().for_each(|t| *t = t.clamp(-gb, gb));
        cons.project(&mut x[p..]);
    };
    let identity = template.params();
    let value_at = |theta: &[f64], c: &[f64]| -> f64 {
        let g = template.with_params(theta).expect("finite parameters");
        FakeSide::build(&g, degree, &points, weights.clone(), false).set.value(Side::Fake, c, model.b)
    };
    let net_value = net(&cons, cfg.net_size).iter().map(|c| value_at(&identity, c).abs()).fold(0.0, f64::max);
    let mut rng = seeded_rng(cfg.seed, 0x6c61_6d);
    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|_| {
            let mut x: Vec<f64> = identity.iter().map(|t| t + (2.0 * rng.gen::<f64>() - 1.0)).collect();
            x.extend(random_coeffs(&mut rng, &cons));
            x
        })
        .collect();
    let ascent_values: Vec<f64> = starts
        .iter()
        .map(|x0| {
            [1.0, -1.0]
                .iter()
                .map(|&s| {
                    let mut x = x0.clone();
                    ascend(&mut x, cfg.iterations, |v| eval(v, s), project)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let value = ascent_values.iter().copied().fold(net_value, f64::max);
    Ok(GenError { value, net_value, ascent_values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::unit_f64;
    use crate::risk::noise_samples;

    fn uniform_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, 21);
        (0..n).map(|_| unit_f64(&mut rng)).collect()
    }

    fn fast() -> GenErrorConfig {
        GenErrorConfig { restarts: 8, iterations: 40, ..GenErrorConfig::default() }
    }

    #[test]
    fn constant_discriminator_contributes_nothing() {
        let f = GridDensity::uniform(vec![256]).unwrap();
        let model = ModelConfig::for_dim(1);
        let cons = DiscConstraint::new(&model, 6, 50.0);
        let y = uniform_sample(100, 1);
        let mut pts = y.clone();
        let mut w = vec![0.01; 100];
        for c in f.centers() {
            pts.push(c[0]);
            w.push(-1.0 / 256.0);
        }
        let set = BasisSet::new(1, 6, &pts, w);
        let mut c = vec![0.0; cons.nb()];
        c[0] = 0.7;
        assert!(set.value(Side::Real, &c, model.b).abs() < 1e-14);
    }

    #[test]
    fn mu_error_shrinks_with_n() {
        let f = GridDensity::uniform(vec![256]).unwrap();
        let model = ModelConfig::for_dim(1);
        let small: Vec<f64> = (0..5).map(|s| generalization_error_mu(&uniform_sample(256, s), &f, &model, &fast()).unwrap().value).collect();
        let large: Vec<f64> = (0..5).map(|s| generalization_error_mu(&uniform_sample(16384, s), &f, &model, &fast()).unwrap().value).collect();
        let med = |v: &[f64]| crate::numerics::median(v).unwrap();
        assert!(med(&small) > med(&large));
        assert!(large.iter().all(|v| *v < 0.02 && *v >= 0.0));
    }

    #[test]
    fn mu_error_is_order_invariant() {
        let f = GridDensity::uniform(vec![128]).unwrap();
        let model = ModelConfig::for_dim(1);
        let mut y = uniform_sample(500, 3);
        let a = generalization_error_mu(&y, &f, &model, &fast()).unwrap().value;
        y.reverse();
        let b = generalization_error_mu(&y, &f, &model, &fast()).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lambda_error_shrinks_with_n() {
        let model = ModelConfig::for_dim(1);
        let shape = GeneratorShape::default_for(1);
        let cfg = GenErrorConfig { restarts: 4, iterations: 30, ..GenErrorConfig::default() };
        let a = generalization_error_lambda(&noise_samples(1, 256, 1), shape, &model, &cfg).unwrap();
        let b = generalization_error_lambda(&noise_samples(1, 16384, 1), shape, &model, &cfg).unwrap();
        assert!(a.value > b.value, "{} vs {}", a.value, b.value);
        assert!(b.value < 0.02);
        assert!(a.value >= a.net_value);
    }
}
