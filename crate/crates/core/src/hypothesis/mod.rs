//! Hypothesis classes: model configuration, generators, discriminators, transports and
//! Hölder norms.

mod discriminator;
mod generator;
mod holder;
mod rosenblatt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::GridDensity;

pub use discriminator::{default_degree, sigmoid, Discriminator};
pub(crate) use discriminator::log_terms;
pub use generator::{GeneratorShape, MonotoneGenerator, DEFAULT_FLOOR};
pub use holder::{holder_norm, FnField, HolderNorm, HolderSampling, PolynomialField, SmoothField};
pub use rosenblatt::{rosenblatt_transport, RosenblattFit, TransportMap};

/// Largest admissible generated density; corresponds to a Jacobian floor of 1e-6.
pub const MAX_DENSITY: f64 = 1e6;

/// Constants of the Hölder model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    /// Bound on the generator norm.
    pub big_k: f64,
    /// Bound on the inverse generator norm.
    pub k_hat: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_dim(1)
    }
}

impl ModelConfig {
    /// Defaults satisfying the high-regularity condition in dimension `d`.
    pub fn for_dim(d: usize) -> Self {
        ModelConfig { d, k: d + 1, alpha: 1.0, big_k: 1e4, k_hat: 1e4, b: 0.1, c1: 5.0, c2: 50.0, kappa: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if self.k < 2 {
            return Err(Error::config("regularity k must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("Hölder exponent must lie in (0, 1]"));
        }
        if !(self.b > 0.0 && self.b < 0.5) {
            return Err(Error::config("B must lie in (0, 1/2)"));
        }
        for (name, v) in [("K", self.big_k), ("K_hat", self.k_hat), ("C1", self.c1), ("C2", self.c2), ("kappa", self.kappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// `2 - alpha + d/2`, which `k` must exceed for rate results.
    pub fn regularity_bound(&self) -> f64 {
        2.0 - self.alpha + self.d as f64 / 2.0
    }

    pub fn high_regularity(&self) -> bool {
        self.k as f64 > self.regularity_bound()
    }

    pub fn require_high_regularity(&self) -> Result<()> {
        if self.high_regularity() {
            Ok(())
        } else {
            Err(Error::Regularity { k: self.k as f64, bound: self.regularity_bound() })
        }
    }

    /// Entropy exponent `s = d / (alpha + k - 2)` of the discriminator class in C^1.
    pub fn entropy_exponent(&self) -> f64 {
        self.d as f64 / (self.alpha + self.k as f64 - 2.0)
    }
}

/// A bijection of [0, 1]^d pushing Lebesgue measure forward to a density.
pub trait Transport: Send + Sync {
    fn dim(&self) -> usize;
    fn forward(&self, z: &[f64], y: &mut [f64]);
    fn inverse(&self, y: &[f64], z: &mut [f64]);
    /// Density of the pushed-forward measure, `|det D phi^{-1}(y)|`.
    fn density(&self, y: &[f64]) -> f64;
}

/// Anything that assigns a value in (0, 1) to points of [0, 1]^d.
pub trait DiscriminatorFn: Send + Sync {
    fn value(&self, y: &[f64]) -> f64;
}

fn check_unit_cube(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::input(format!("expected a point of dimension {dim}")));
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::input(format!("coordinate {v} outside [0, 1]")));
    }
    Ok(())
}

pub fn apply_generator<T: Transport + ?Sized>(g: &T, z: &[f64]) -> Result<Vec<f64>> {
    check_unit_cube(z, g.dim())?;
    let mut y = vec![0.0; g.dim()];
    g.forward(z, &mut y);
    Ok(y)
}

pub fn apply_discriminator<D: DiscriminatorFn + ?Sized>(xi: &D, dim: usize, y: &[f64]) -> Result<f64> {
    check_unit_cube(y, dim)?;
    Ok(xi.value(y))
}

/// Tabulate `|det D phi^{-1}|` at cell centers without normalizing.
pub fn raw_generator_density<T: Transport + ?Sized>(g: &T, resolution: &[usize]) -> Result<(Vec<f64>, f64)> {
    if resolution.len() != g.dim() {
        return Err(Error::input("grid dimension differs from the generator dimension"));
    }
    let shell = GridDensity::uniform(resolution.to_vec())?;
    let values: Vec<f64> = (0..shell.len()).map(|i| g.density(&shell.center(i))).collect();
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v > MAX_DENSITY) {
        return Err(Error::DegenerateGenerator(format!("Jacobian below the admissible floor (density {v})")));
    }
    let mass = values.iter().sum::<f64>() * shell.cell_volume();
    Ok((values, mass))
}

/// Mass the generated measure puts on each grid cell, through the inverse map.
///
/// In two dimensions the transport must be triangular (the first output depends on `z_1` only);
/// the strip integral over `z_1` uses 4-point Gauss per cell.
pub fn generator_cell_masses<T: Transport + ?Sized>(g: &T, resolution: &[usize]) -> Result<Vec<f64>> {
    if resolution.len() != g.dim() || resolution.iter().any(|r| *r == 0) {
        return Err(Error::input("grid dimension differs from the generator dimension"));
    }
    let inv1 = |y: f64| {
        let mut z = vec![0.0; g.dim()];
        let mut p = vec![y; g.dim()];
        if g.dim() == 2 {
            p[1] = 0.5;
        }
        g.inverse(&p, &mut z);
        z[0]
    };
    let r0 = resolution[0];
    let edges0: Vec<f64> = (0..=r0).map(|i| if i == r0 { 1.0 } else if i == 0 { 0.0 } else { inv1(i as f64 / r0 as f64) }).collect();
    if g.dim() == 1 {
        return Ok(edges0.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect());
    }
    let r1 = resolution[1];
    let (gx, gw) = crate::numerics::gauss_legendre_unit(4);
    let mut out = vec![0.0; r0 * r1];
    let mut z = [0.0; 2];
    let mut y = [0.0; 2];
    for i in 0..r0 {
        let (za, zb) = (edges0[i], edges0[i + 1]);
        for (x, w) in gx.iter().zip(&gw) {
            let z1 = za + (zb - za) * x;
            g.forward(&[z1, 0.5], &mut y);
            let mut prev = 0.0;
            for j in 1..=r1 {
                let cur = if j == r1 {
                    1.0
                } else {
                    g.inverse(&[y[0], j as f64 / r1 as f64], &mut z);
                    z[1]
                };
                out[i * r1 + j - 1] += w * (zb - za) * (cur - prev).max(0.0);
                prev = cur;
            }
        }
    }
    Ok(out)
}

/// Cell-averaged density of the generated measure on a grid, renormalized after checking its mass.
pub fn generator_density<T: Transport + ?Sized>(g: &T, resolution: &[usize]) -> Result<GridDensity> {
    let masses = generator_cell_masses(g, resolution)?;
    let mass: f64 = masses.iter().sum();
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::DegenerateGenerator(format!("generated measure has mass {mass} on the grid")));
    }
    let vol: f64 = resolution.iter().map(|r| 1.0 / *r as f64).product();
    if let Some(v) = masses.iter().find(|m| !m.is_finite() || **m / vol > MAX_DENSITY) {
        return Err(Error::DegenerateGenerator(format!("Jacobian below the admissible floor (cell mass {v})")));
    }
    GridDensity::normalized(resolution.to_vec(), masses.iter().map(|m| m / vol).collect())
}

/// A discriminator tabulated on a grid (piecewise constant).
#[derive(Debug, Clone, PartialEq)]
pub struct GridDiscriminator {
    grid: GridDensity,
}

impl GridDiscriminator {
    pub fn values(&self) -> &[f64] {
        self.grid.values()
    }

    pub fn resolution(&self) -> &[usize] {
        self.grid.resolution()
    }
}

impl DiscriminatorFn for GridDiscriminator {
    fn value(&self, y: &[f64]) -> f64 {
        self.grid.value_at(y)
    }
}

/// `xi_phi = f_mu / (f_mu + f_phi)`, with 1/2 where both densities vanish.
pub fn optimal_discriminator(f_mu: &GridDensity, f_phi: &GridDensity) -> Result<GridDiscriminator> {
    if f_mu.resolution() != f_phi.resolution() {
        return Err(Error::input("densities live on different grids"));
    }
    let values = f_mu
        .values()
        .iter()
        .zip(f_phi.values())
        .map(|(a, b)| if a + b > 0.0 { a / (a + b) } else { 0.5 })
        .collect();
    // the grid type is reused for lookup only; these values are not a density
    let grid = GridDensity::from_raw_parts(f_mu.resolution().to_vec(), values);
    Ok(GridDiscriminator { grid })
}

pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse { line: ln + 1, msg: "expected key = value".into() })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| t.parse().map_err(|_| Error::input(format!("bad number '{t}'")))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::jsd;
    use std::f64::consts::LN_2;

    #[test]
    fn high_regularity_condition() {
        let mut m = ModelConfig::for_dim(1);
        m.k = 2;
        m.alpha = 1.0;
        assert!(m.high_regularity());
        let two = ModelConfig::for_dim(2);
        assert!(two.high_regularity());
        let mut bad = ModelConfig::for_dim(2);
        bad.k = 2;
        assert!(matches!(bad.require_high_regularity(), Err(Error::Regularity { .. })));
    }

    #[test]
    fn optimal_discriminator_risk_identity_on_a_grid() {
        let f_mu = GridDensity::tabulate(vec![256], |y| 1.0 + 0.5 * (6.0 * y[0]).cos()).unwrap();
        let f_phi = GridDensity::tabulate(vec![256], |y| 0.5 + y[0]).unwrap();
        let xi = optimal_discriminator(&f_mu, &f_phi).unwrap();
        let vol = f_mu.cell_volume();
        let risk: f64 = 0.5
            * f_mu
                .values()
                .iter()
                .zip(f_phi.values())
                .zip(xi.values())
                .map(|((a, b), x)| (a * x.ln() + b * (1.0 - x).ln()) * vol)
                .sum::<f64>();
        assert!((risk - (jsd(&f_mu, &f_phi).unwrap() - LN_2)).abs() < 1e-12);
    }

    #[test]
    fn point_evaluation_checks_the_domain() {
        let g = MonotoneGenerator::identity(GeneratorShape::default_for(1)).unwrap();
        assert!(apply_generator(&g, &[1.2]).is_err());
        assert!(apply_generator(&g, &[0.25]).is_ok());
    }
}
