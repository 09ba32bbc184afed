//! The tent observable `g = (psi, ..., psi)` from the torus to the cube, optionally followed
//! by a smooth warp, and the push-forward of torus densities through it.

use crate::dynamics::{TorusPoint, Trajectory};
use crate::error::{Error, Result};
use crate::hypothesis::{GeneratorShape, MonotoneGenerator, Transport, DEFAULT_FLOOR};
use crate::measures::GridDensity;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableConfig {
    eps: f64,
    dim: usize,
    warp: Option<MonotoneGenerator>,
}

impl ObservableConfig {
    pub fn new(eps: f64, dim: usize, warp: Option<MonotoneGenerator>) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::input(format!("eps = {eps} must lie in (0, 1/2)")));
        }
        if dim == 0 {
            return Err(Error::input("observable dimension must be positive"));
        }
        if let Some(w) = &warp {
            if Transport::dim(w) != dim {
                return Err(Error::input("warp dimension differs from the observable dimension"));
            }
        }
        Ok(ObservableConfig { eps, dim, warp })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn warp(&self) -> Option<&MonotoneGenerator> {
        self.warp.as_ref()
    }

    /// A fixed warp making the target non-uniform; its density stays in [0.6, 1.5] (d = 1).
    pub fn default_warp(dim: usize) -> Result<MonotoneGenerator> {
        let shape = GeneratorShape::default_for(dim);
        let mut coeffs = vec![vec![1.0, 0.2, -0.1, 0.0, 0.0, 0.0][..shape.order].to_vec()];
        if dim == 2 {
            let mut c = vec![0.0; shape.order * shape.cond_order];
            c[0] = 1.0;
            c[1] = -0.15;
            c[shape.order] = 0.1;
            coeffs.push(c);
        }
        MonotoneGenerator::new(shape, DEFAULT_FLOOR, coeffs)
    }

    /// Lipschitz constant of `g` w.r.t. the torus metric: `1/eps` times the warp's.
    pub fn lipschitz_constant(&self) -> f64 {
        let warp_lip = match &self.warp {
            None => 1.0,
            Some(w) => {
                // sampled sup of the Jacobian diagonal plus off-diagonal slack in d = 2
                let n = 257;
                let mut sup: f64 = 0.0;
                for i in 0..n {
                    let t = i as f64 / (n - 1) as f64;
                    let z = vec![t; self.dim];
                    sup = sup.max(w.jacobian_diag(&z).iter().map(|v| v * v).sum::<f64>().sqrt());
                }
                sup
            }
        };
        warp_lip / self.eps
    }
}

/// The tent map with break point `1 - eps`.
pub fn psi(x: f64, eps: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::input(format!("psi argument {x} outside [0, 1]")));
    }
    Ok(psi_unchecked(x, eps))
}

fn psi_unchecked(x: f64, eps: f64) -> f64 {
    if x <= 1.0 - eps {
        x / (1.0 - eps)
    } else {
        (1.0 - x) / eps
    }
}

pub fn apply_g(cfg: &ObservableConfig, x: &TorusPoint) -> Result<Vec<f64>> {
    if x.dim() != cfg.dim {
        return Err(Error::input("point dimension differs from the observable dimension"));
    }
    Ok(apply_raw(cfg, x.coords()))
}

fn apply_raw(cfg: &ObservableConfig, x: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = x.iter().map(|v| psi_unchecked(*v, cfg.eps)).collect();
    match &cfg.warp {
        None => u,
        Some(w) => {
            let mut y = vec![0.0; cfg.dim];
            w.forward(&u, &mut y);
            y
        }
    }
}

/// Apply `g` to every state of a trajectory (row-major output).
pub fn observe(cfg: &ObservableConfig, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.dim() != cfg.dim {
        return Err(Error::input("trajectory dimension differs from the observable dimension"));
    }
    Ok((0..traj.len()).flat_map(|i| apply_raw(cfg, traj.state(i))).collect())
}

/// Branch weights and local inverses for one axis: `(weight, scale, offset)`, `h(y) = offset + scale * y`.
fn branches(eps: f64) -> [(f64, f64, f64); 2] {
    [(1.0 - eps, 1.0 - eps, 0.0), (eps, -eps, 1.0)]
}

/// Density of `g_* nu` at a point of the cube, for `f_nu` given pointwise on the torus.
pub fn pushforward_value<F: Fn(&[f64]) -> f64>(cfg: &ObservableConfig, f_nu: &F, y: &[f64]) -> f64 {
    let (u, jac) = match &cfg.warp {
        None => (y.to_vec(), 1.0),
        Some(w) => {
            let mut u = vec![0.0; cfg.dim];
            w.inverse(y, &mut u);
            (u, w.density(y))
        }
    };
    let d = cfg.dim;
    let br = branches(cfg.eps);
    let mut total = 0.0;
    let mut x = vec![0.0; d];
    for mask in 0..(1usize << d) {
        let mut weight = 1.0;
        for j in 0..d {
            let (w, s, o) = br[(mask >> j) & 1];
            weight *= w;
            x[j] = o + s * u[j];
        }
        total += weight * f_nu(&x);
    }
    total * jac
}

/// Tabulate the push-forward density of a pointwise torus density on a grid (cell centers).
pub fn pushforward_density_fn<F: Fn(&[f64]) -> f64>(cfg: &ObservableConfig, f_nu: &F, resolution: Vec<usize>) -> Result<GridDensity> {
    if resolution.len() != cfg.dim {
        return Err(Error::input("grid dimension differs from the observable dimension"));
    }
    let shell = GridDensity::uniform(resolution.clone())?;
    let values: Vec<f64> = (0..shell.len()).map(|i| pushforward_value(cfg, f_nu, &shell.center(i))).collect();
    GridDensity::normalized(resolution, values)
}

/// Cells of a uniform grid of `n` cells overlapping `[lo, hi]`, with overlap lengths.
fn overlaps(lo: f64, hi: f64, n: usize) -> Vec<(usize, f64)> {
    let h = 1.0 / n as f64;
    let first = ((lo / h).floor() as usize).min(n - 1);
    let last = ((hi / h).ceil() as usize).clamp(first + 1, n);
    (first..last)
        .filter_map(|c| {
            let a = (c as f64 * h).max(lo);
            let b = ((c + 1) as f64 * h).min(hi);
            (b > a).then_some((c, b - a))
        })
        .collect()
}

/// Exact mass of the piecewise-constant `f_nu` over a box given per axis.
fn box_mass(f_nu: &GridDensity, boxes: &[(f64, f64)]) -> f64 {
    let res = f_nu.resolution();
    let lists: Vec<Vec<(usize, f64)>> = boxes.iter().zip(res).map(|((a, b), n)| overlaps(*a, *b, *n)).collect();
    let mut total = 0.0;
    let mut idx = vec![0usize; lists.len()];
    'outer: loop {
        let mut flat = 0;
        let mut vol = 1.0;
        for (j, l) in lists.iter().enumerate() {
            let (c, w) = l[idx[j]];
            flat = flat * res[j] + c;
            vol *= w;
        }
        total += f_nu.values()[flat] * vol;
        for j in (0..lists.len()).rev() {
            idx[j] += 1;
            if idx[j] < lists[j].len() {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }
    total
}

/// Mass of `g_psi_* nu` (without warp) on the box `[a_j, b_j]`.
fn tent_mass(cfg: &ObservableConfig, f_nu: &GridDensity, cell: &[(f64, f64)]) -> f64 {
    let d = cfg.dim;
    let br = branches(cfg.eps);
    let mut total = 0.0;
    for mask in 0..(1usize << d) {
        let pre: Vec<(f64, f64)> = (0..d)
            .map(|j| {
                let (_, s, o) = br[(mask >> j) & 1];
                let (p, q) = (o + s * cell[j].0, o + s * cell[j].1);
                (p.min(q), p.max(q))
            })
            .collect();
        total += box_mass(f_nu, &pre);
    }
    total
}

/// Push-forward of a piecewise-constant torus density, as exact cell averages on the same grid.
///
/// Without a warp, and with a warp in d = 1, cell masses are computed exactly; in d = 2 the warped
/// density is averaged with a 4 x 4 midpoint rule per cell and renormalized.
pub fn pushforward_density(cfg: &ObservableConfig, f_nu: &GridDensity) -> Result<GridDensity> {
    if f_nu.dim() != cfg.dim {
        return Err(Error::input("density dimension differs from the observable dimension"));
    }
    if (f_nu.mass() - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("input density has mass {}", f_nu.mass())));
    }
    let res = f_nu.resolution().to_vec();
    let vol = f_nu.cell_volume();
    let values: Vec<f64> = match (&cfg.warp, cfg.dim) {
        (None, _) => (0..f_nu.len())
            .map(|i| {
                let cell = cell_box(&res, i);
                tent_mass(cfg, f_nu, &cell) / vol
            })
            .collect(),
        (Some(w), 1) => {
            let n = res[0];
            let mut z0 = [0.0];
            let mut z1 = [0.0];
            (0..n)
                .map(|i| {
                    w.inverse(&[i as f64 / n as f64], &mut z0);
                    w.inverse(&[(i + 1) as f64 / n as f64], &mut z1);
                    tent_mass(cfg, f_nu, &[(z0[0], z1[0])]) / vol
                })
                .collect()
        }
        (Some(_), _) => {
            let sub = 4;
            let look = |x: &[f64]| f_nu.value_at(&x.iter().map(|v| v.clamp(0.0, 1.0 - 1e-15)).collect::<Vec<_>>());
            let shell = GridDensity::uniform(res.clone())?;
            let mut values = Vec::with_capacity(shell.len());
            for i in 0..shell.len() {
                let cell = cell_box(&res, i);
                let mut acc = 0.0;
                for a in 0..sub {
                    for b in 0..sub {
                        let y = [
                            cell[0].0 + (a as f64 + 0.5) / sub as f64 * (cell[0].1 - cell[0].0),
                            cell[1].0 + (b as f64 + 0.5) / sub as f64 * (cell[1].1 - cell[1].0),
                        ];
                        acc += pushforward_value(cfg, &look, &y);
                    }
                }
                values.push(acc / (sub * sub) as f64);
            }
            return GridDensity::normalized(res, values);
        }
    };
    GridDensity::new(res, values)
}

fn cell_box(res: &[usize], mut flat: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); res.len()];
    for j in (0..res.len()).rev() {
        let c = flat % res[j];
        flat /= res[j];
        let h = 1.0 / res[j] as f64;
        out[j] = (c as f64 * h, (c + 1) as f64 * h);
    }
    out
}

/// `(ln 2 / 2) (2^d + d - 1) M eps`, the bound on `D_JS(nu, mu)` for an unwarped observable.
pub fn jsd_approximation_bound(cfg: &ObservableConfig, m_norm: f64) -> Result<f64> {
    if !(m_norm >= 0.0) {
        return Err(Error::input("norm bound must be nonnegative"));
    }
    Ok(std::f64::consts::LN_2 / 2.0 * sup_bound_factor(cfg.dim) * m_norm * cfg.eps)
}

/// `2^d + d - 1`.
pub fn sup_bound_factor(d: usize) -> f64 {
    (1u64 << d) as f64 + d as f64 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::torus_distance;
    use crate::measures::{density_from_samples, jsd, tv};
    use crate::numerics::{seeded_rng, unit_f64};
    use proptest::prelude::*;

    fn cfg(eps: f64, dim: usize) -> ObservableConfig {
        ObservableConfig::new(eps, dim, None).unwrap()
    }

    #[test]
    fn tent_values() {
        let e = 0.2;
        assert_eq!(psi(0.0, e).unwrap(), 0.0);
        assert_eq!(psi(1.0 - e, e).unwrap(), 1.0);
        assert_eq!(psi(1.0, e).unwrap(), 0.0);
        assert!(psi(1.5, e).is_err());
        assert!(ObservableConfig::new(0.5, 1, None).is_err());
    }

    #[test]
    fn g_worked_examples() {
        let c = cfg(0.25, 2);
        assert_eq!(apply_g(&c, &TorusPoint::new(vec![0.0, 0.0]).unwrap()).unwrap(), vec![0.0, 0.0]);
        let y = apply_g(&c, &TorusPoint::new(vec![0.375, 0.875]).unwrap()).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn g_is_lipschitz_on_the_torus() {
        let c = cfg(0.1, 2);
        let mut rng = seeded_rng(3, 1);
        for _ in 0..100_000 {
            let x = TorusPoint::new(vec![unit_f64(&mut rng), unit_f64(&mut rng)]).unwrap();
            let y = TorusPoint::new(vec![unit_f64(&mut rng), unit_f64(&mut rng)]).unwrap();
            let gx = apply_g(&c, &x).unwrap();
            let gy = apply_g(&c, &y).unwrap();
            let d = ((gx[0] - gy[0]).powi(2) + (gx[1] - gy[1]).powi(2)).sqrt();
            assert!(d <= c.lipschitz_constant() * torus_distance(&x, &y).unwrap() * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn uniform_stays_uniform() {
        for dim in [1, 2] {
            let res = vec![if dim == 1 { 512 } else { 64 }; dim];
            let mu = pushforward_density(&cfg(0.3, dim), &GridDensity::uniform(res).unwrap()).unwrap();
            assert!(mu.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn sup_bound_for_a_sine_density() {
        let eps = 0.25;
        let c = cfg(eps, 1);
        let f = |x: &[f64]| 1.0 + 0.1 * (std::f64::consts::TAU * x[0]).sin();
        // sup|f| + sup|f'| + sup|f''| + Lip(f'') with k = 2, alpha = 1
        let w = std::f64::consts::TAU;
        let m = 1.1 + 0.1 * w + 0.1 * w * w + 0.1 * w * w * w;
        let mut worst: f64 = 0.0;
        for i in 0..=1000 {
            let y = i as f64 / 1000.0;
            worst = worst.max((f(&[y]) - pushforward_value(&c, &f, &[y])).abs());
        }
        assert!(worst <= sup_bound_factor(1) * m * eps, "{worst}");
    }

    #[test]
    fn cellwise_and_pointwise_agree() {
        let c = ObservableConfig::new(0.15, 1, Some(ObservableConfig::default_warp(1).unwrap())).unwrap();
        let f = |x: &[f64]| 1.0 + 0.3 * (std::f64::consts::TAU * x[0]).cos();
        let nu = GridDensity::tabulate(vec![4096], f).unwrap();
        let exact = pushforward_density(&c, &nu).unwrap();
        assert!((exact.mass() - 1.0).abs() < 1e-9);
        let coarse = GridDensity::tabulate(vec![4096], |y| pushforward_value(&c, &f, y)).unwrap();
        assert!(tv(&exact, &coarse).unwrap() < 1e-3);
    }

    #[test]
    fn warped_two_dimensional_mass() {
        let c = ObservableConfig::new(0.2, 2, Some(ObservableConfig::default_warp(2).unwrap())).unwrap();
        let nu = GridDensity::tabulate(vec![32, 32], |x| 1.0 + 0.2 * (std::f64::consts::TAU * x[0]).sin() * (std::f64::consts::TAU * x[1]).cos()).unwrap();
        let mu = pushforward_density(&c, &nu).unwrap();
        assert!((mu.mass() - 1.0).abs() < 1e-9);
        assert!(mu.min_value() > 0.0);
    }

    #[test]
    fn histogram_of_observed_samples_matches() {
        let eps = 0.2;
        let c = cfg(eps, 1);
        let nu = GridDensity::tabulate(vec![512], |x| 1.0 + 0.3 * (std::f64::consts::TAU * x[0]).sin()).unwrap();
        let mu = pushforward_density(&c, &nu).unwrap();
        // inverse-CDF sampling from the piecewise-constant nu
        let h = 1.0 / 512.0;
        let mut cdf = vec![0.0];
        for v in nu.values() {
            cdf.push(cdf.last().unwrap() + v * h);
        }
        let mut rng = seeded_rng(9, 2);
        let mut ys = Vec::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            let u = unit_f64(&mut rng);
            let k = cdf.partition_point(|c| *c <= u).clamp(1, 512) - 1;
            let x = (k as f64 + (u - cdf[k]) / (cdf[k + 1] - cdf[k])) * h;
            ys.push(psi(x.min(1.0), eps).unwrap());
        }
        let hist = density_from_samples(&ys, vec![64]).unwrap();
        let coarse = GridDensity::normalized(vec![64], mu.values().chunks(8).map(|c| c.iter().sum::<f64>() / 8.0).collect()).unwrap();
        assert!(tv(&hist, &coarse).unwrap() < 0.01);
    }

    #[test]
    fn bound_values() {
        let b = jsd_approximation_bound(&cfg(0.1, 2), 1.0).unwrap();
        assert!((b - 0.173286795).abs() < 1e-8);
        assert!(jsd_approximation_bound(&cfg(1e-9, 1), 1.0).unwrap() < 1e-8);
    }

    proptest! {
        #[test]
        fn mass_is_conserved(a in -0.4f64..0.4, b in -0.3f64..0.3, eps in 0.01f64..0.49) {
            let f = move |x: &[f64]| 1.0 + a * (std::f64::consts::TAU * x[0]).sin() + b * (2.0 * std::f64::consts::TAU * x[0]).cos();
            let nu = GridDensity::tabulate(vec![512], f).unwrap();
            let mu = pushforward_density(&cfg(eps, 1), &nu).unwrap();
            prop_assert!((mu.mass() - 1.0).abs() < 1e-9);
            let l1 = 2.0 * tv(&nu, &mu).unwrap();
            prop_assert!(jsd(&nu, &mu).unwrap() <= std::f64::consts::LN_2 / 2.0 * l1 + 1e-15);
        }
    }
}
