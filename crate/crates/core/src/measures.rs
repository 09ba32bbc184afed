//! Densities tabulated on uniform grids over [0, 1]^d and the divergences between them.
//!
//! Values live at cell centers; integrals use the midpoint rule. Logarithms are natural.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-9;

/// A probability density sampled at the cell centers of a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    resolution: Vec<usize>,
    values: Vec<f64>,
}

impl GridDensity {
    /// Wrap tabulated values; they must be nonnegative with unit midpoint mass.
    pub fn new(resolution: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let g = Self::unchecked(resolution, values)?;
        if g.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("density values must be finite and nonnegative"));
        }
        let mass = g.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::input(format!("density mass {mass} differs from 1")));
        }
        Ok(g)
    }

    fn unchecked(resolution: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if resolution.is_empty() || resolution.iter().any(|r| *r == 0) {
            return Err(Error::input("grid resolution must be positive in every axis"));
        }
        if resolution.iter().product::<usize>() != values.len() {
            return Err(Error::input("value count does not match the grid"));
        }
        Ok(GridDensity { resolution, values })
    }

    /// Grid-shaped table without density checks (used for tabulated discriminators).
    pub(crate) fn from_raw_parts(resolution: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(resolution.iter().product::<usize>(), values.len());
        GridDensity { resolution, values }
    }

    /// Tabulate `f` at cell centers and rescale to unit mass.
    pub fn tabulate(resolution: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if resolution.is_empty() || resolution.contains(&0) {
            return Err(Error::input("grid resolution must be positive in every axis"));
        }
        let dim = resolution.len();
        let total: usize = resolution.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut y = vec![0.0; dim];
        for idx in 0..total {
            center_into(&resolution, idx, &mut y);
            values.push(f(&y));
        }
        Self::normalized(resolution, values)
    }

    /// Rescale nonnegative values to unit mass.
    pub fn normalized(resolution: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut g = Self::unchecked(resolution, values)?;
        if g.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("density values must be finite and nonnegative"));
        }
        let mass = g.mass();
        if mass <= 0.0 {
            return Err(Error::input("density has zero mass"));
        }
        g.values.iter_mut().for_each(|v| *v /= mass);
        Ok(g)
    }

    pub fn uniform(resolution: Vec<usize>) -> Result<Self> {
        let n = resolution.iter().product();
        Self::new(resolution, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.resolution.iter().map(|r| 1.0 / *r as f64).product()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Center of cell `idx` (row-major, last axis fastest).
    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        center_into(&self.resolution, idx, &mut y);
        y
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing `y` (points on the upper boundary go to the last cell).
    pub fn cell_of(&self, y: &[f64]) -> Option<usize> {
        if y.len() != self.dim() {
            return None;
        }
        let mut idx = 0;
        for (r, v) in self.resolution.iter().zip(y) {
            if !(0.0..=1.0).contains(v) {
                return None;
            }
            let k = ((v * *r as f64) as usize).min(r - 1);
            idx = idx * r + k;
        }
        Some(idx)
    }

    /// Piecewise-constant evaluation.
    pub fn value_at(&self, y: &[f64]) -> f64 {
        self.cell_of(y).map_or(0.0, |i| self.values[i])
    }

    fn same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.resolution != other.resolution {
            return Err(Error::input("densities live on different grids"));
        }
        Ok(())
    }

    /// CSV with a metadata comment, then one row per cell: index tuple and value.
    pub fn to_csv(&self) -> String {
        let res: Vec<String> = self.resolution.iter().map(|r| r.to_string()).collect();
        let mut out = format!("# dims={} resolution={}\n", self.dim(), res.join("x"));
        let idx_cols: Vec<String> = (0..self.dim()).map(|j| format!("i{j}")).collect();
        out.push_str(&format!("{},value\n", idx_cols.join(",")));
        for (k, v) in self.values.iter().enumerate() {
            let mut rem = k;
            let mut tuple = vec![0; self.dim()];
            for j in (0..self.dim()).rev() {
                tuple[j] = rem % self.resolution[j];
                rem /= self.resolution[j];
            }
            let t: Vec<String> = tuple.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{},{}\n", t.join(","), v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, meta) = lines.next().ok_or_else(|| Error::input("empty density file"))?;
        let mut dims = None;
        let mut resolution = None;
        for tok in meta.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("dims=") {
                dims = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("resolution=") {
                resolution = v.split('x').map(|r| r.parse::<usize>().ok()).collect::<Option<Vec<_>>>();
            }
        }
        let (dims, resolution) = match (dims, resolution) {
            (Some(d), Some(r)) if r.len() == d => (d, r),
            _ => return Err(Error::Parse { line: 1, msg: "expected '# dims=<d> resolution=<r0>x<r1>'".into() }),
        };
        lines.next();
        let total: usize = resolution.iter().product();
        let mut values = vec![f64::NAN; total];
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse_err = |msg: &str| Error::Parse { line: ln + 1, msg: msg.to_string() };
            if fields.len() != dims + 1 {
                return Err(parse_err("wrong number of fields"));
            }
            let mut idx = 0;
            for j in 0..dims {
                let i: usize = fields[j].trim().parse().map_err(|_| parse_err("bad index"))?;
                if i >= resolution[j] {
                    return Err(parse_err("index out of range"));
                }
                idx = idx * resolution[j] + i;
            }
            values[idx] = fields[dims].trim().parse().map_err(|_| parse_err("bad value"))?;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::input("density file does not cover every cell"));
        }
        Self::new(resolution, values)
    }
}

fn center_into(resolution: &[usize], idx: usize, y: &mut [f64]) {
    let mut rem = idx;
    for j in (0..resolution.len()).rev() {
        let r = resolution[j];
        y[j] = ((rem % r) as f64 + 0.5) / r as f64;
        rem /= r;
    }
}

/// Kullback-Leibler divergence `KL(p || q)`; infinite when `q` vanishes where `p` does not.
pub fn kl(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.same_grid(q)?;
    let mut s = 0.0;
    for (a, b) in p.values.iter().zip(&q.values) {
        if *a == 0.0 {
            continue;
        }
        if *b == 0.0 {
            return Ok(f64::INFINITY);
        }
        s += a * (a / b).ln();
    }
    Ok((s * p.cell_volume()).max(0.0))
}

/// Jensen-Shannon divergence, in [0, ln 2].
pub fn jsd(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.same_grid(q)?;
    let mut s = 0.0;
    for (a, b) in p.values.iter().zip(&q.values) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            s += a * (a / m).ln();
        }
        if *b > 0.0 {
            s += b * (b / m).ln();
        }
    }
    Ok((0.5 * s * p.cell_volume()).clamp(0.0, LN_2))
}

/// Total variation distance `1/2 * integral |p - q|`.
pub fn tv(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.same_grid(q)?;
    let s: f64 = p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * s * p.cell_volume())
}

/// Histogram density estimate; `samples` is row-major with `resolution.len()` columns.
pub fn density_from_samples(samples: &[f64], resolution: Vec<usize>) -> Result<GridDensity> {
    let d = resolution.len();
    if d == 0 || samples.is_empty() || samples.len() % d != 0 {
        return Err(Error::input("need a nonempty sample matching the grid dimension"));
    }
    let total: usize = resolution.iter().product();
    let mut counts = vec![0.0; total];
    let shell = GridDensity { resolution: resolution.clone(), values: Vec::new() };
    for y in samples.chunks(d) {
        let i = shell
            .cell_of(y)
            .ok_or_else(|| Error::input(format!("sample {y:?} outside the unit cube")))?;
        counts[i] += 1.0;
    }
    GridDensity::normalized(resolution, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step_density(res: usize) -> GridDensity {
        GridDensity::tabulate(vec![res], |y| if y[0] < 0.5 { 2.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn kl_of_half_interval_against_uniform_is_ln2() {
        let p = step_density(512);
        let u = GridDensity::uniform(vec![512]).unwrap();
        assert!((kl(&p, &u).unwrap() - LN_2).abs() < 1e-12);
        assert_eq!(kl(&u, &p).unwrap(), f64::INFINITY);
    }

    #[test]
    fn disjoint_supports_have_maximal_jsd() {
        let p = step_density(256);
        let q = GridDensity::tabulate(vec![256], |y| if y[0] >= 0.5 { 2.0 } else { 0.0 }).unwrap();
        assert!((jsd(&p, &q).unwrap() - LN_2).abs() < 1e-12);
        assert!((tv(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_densities_have_zero_divergence() {
        let p = GridDensity::tabulate(vec![64, 64], |y| 1.0 + 0.5 * (6.0 * y[0]).sin() * y[1]).unwrap();
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        assert_eq!(tv(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn construction_rejects_wrong_mass() {
        assert!(GridDensity::new(vec![4], vec![1.0, 1.0, 1.0, 2.0]).is_err());
        assert!(GridDensity::new(vec![4], vec![1.0, 1.0, 1.0, 1.0]).is_ok());
        assert!(GridDensity::new(vec![4], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let p = GridDensity::tabulate(vec![8, 5], |y| 0.3 + y[0] * y[1] + (y[1] * 7.0).cos().abs()).unwrap();
        let back = GridDensity::from_csv(&p.to_csv()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn histogram_counts_samples_per_cell() {
        let h = density_from_samples(&[0.1, 0.2, 0.6, 0.9], vec![2]).unwrap();
        assert_eq!(h.values(), &[1.0, 1.0]);
        assert!(density_from_samples(&[1.5], vec![2]).is_err());
    }

    #[test]
    fn divergences_are_stable_under_refinement() {
        let f = |y: &[f64]| 1.0 + 0.6 * (2.0 * std::f64::consts::PI * y[0]).sin();
        let g = |y: &[f64]| 2.0 * y[0] + 0.2;
        let at = |r: usize| {
            let p = GridDensity::tabulate(vec![r], f).unwrap();
            let q = GridDensity::tabulate(vec![r], g).unwrap();
            (jsd(&p, &q).unwrap(), kl(&p, &q).unwrap())
        };
        let (j1, k1) = at(512);
        let (j2, k2) = at(1024);
        assert!((j1 - j2).abs() < 1e-4 && (k1 - k2).abs() < 1e-4);
    }

    fn random_density(seed: u64, res: usize) -> GridDensity {
        let mut rng = crate::numerics::seeded_rng(seed, 77);
        let v: Vec<f64> = (0..res).map(|_| crate::numerics::unit_f64(&mut rng) + 0.01).collect();
        GridDensity::normalized(vec![res], v).unwrap()
    }

    proptest! {
        #[test]
        fn jsd_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let p = random_density(s1, 64);
            let q = random_density(s2, 64);
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-15);
            prop_assert!((0.0..=LN_2).contains(&a));
            // Jensen-Shannon never exceeds (ln 2 / 2) * ||p - q||_1 = ln 2 * TV
            prop_assert!(a <= LN_2 * tv(&p, &q).unwrap() + 1e-15);
        }

        #[test]
        fn kl_is_nonnegative(s1 in 0u64..1000, s2 in 0u64..1000) {
            prop_assert!(kl(&random_density(s1, 32), &random_density(s2, 32)).unwrap() >= 0.0);
        }
    }
}
