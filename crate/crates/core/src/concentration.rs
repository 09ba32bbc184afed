//! Subgaussian concentration of separately Lipschitz observables: McDiarmid bounds for
//! independent data, the tower bound `C sum L_i^2` for trajectories, Monte Carlo tail checks and
//! the variance scaling of Birkhoff averages.

use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{sample_trajectory, torus_distance_raw, System};
use crate::error::{Error, Result};
use crate::numerics::{fit_line, seeded_rng, unit_f64};

/// Distance used between single coordinates of an observable's argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cube,
    Torus,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Cube => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Torus => torus_distance_raw(a, b),
        }
    }
}

/// How the declared coefficients bound a change in one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficients {
    /// `|K(.. y_i ..) - K(.. y_i' ..)| <= c_i`.
    Bounded,
    /// `|K(.. y_i ..) - K(.. y_i' ..)| <= L_i d(y_i, y_i')`.
    Lipschitz,
}

type Evaluator = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A function of `n` points of dimension `dim` (passed row-major) with per-coordinate constants.
pub struct SeparatelyLipschitzObservable {
    n: usize,
    dim: usize,
    coefficients: Vec<f64>,
    kind: Coefficients,
    metric: Metric,
    eval: Evaluator,
}

impl std::fmt::Debug for SeparatelyLipschitzObservable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SeparatelyLipschitzObservable")
            .field("n", &self.n)
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("metric", &self.metric)
            .finish_non_exhaustive()
    }
}

/// Outcome of checking declared coefficients on random single-coordinate perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCheck {
    pub trials: usize,
    pub violations: usize,
    /// Largest ratio of observed change to declared bound.
    pub worst_ratio: f64,
}

impl SeparatelyLipschitzObservable {
    pub fn new(
        n: usize,
        dim: usize,
        coefficients: Vec<f64>,
        kind: Coefficients,
        metric: Metric,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::input("observable needs at least one coordinate"));
        }
        if coefficients.len() != n {
            return Err(Error::input("one coefficient per coordinate is required"));
        }
        if coefficients.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::input("coefficients must be finite and nonnegative"));
        }
        Ok(SeparatelyLipschitzObservable { n, dim, coefficients, kind, metric, eval: Box::new(eval) })
    }

    /// `(1/n) sum f(y_i)` for `f` with values in an interval of length `range`.
    pub fn bounded_mean(n: usize, dim: usize, range: f64, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        Self::new(n, dim, vec![range / n as f64; n], Coefficients::Bounded, Metric::Cube, move |y| {
            y.chunks_exact(dim).map(&f).sum::<f64>() / n as f64
        })
    }

    /// The Birkhoff average `(1/n) sum f(y_i)` of an `lip`-Lipschitz `f`.
    pub fn birkhoff_mean(n: usize, dim: usize, lip: f64, metric: Metric, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        Self::new(n, dim, vec![lip / n as f64; n], Coefficients::Lipschitz, metric, move |y| {
            y.chunks_exact(dim).map(&f).sum::<f64>() / n as f64
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn kind(&self) -> Coefficients {
        self.kind
    }

    pub fn evaluate(&self, points: &[f64]) -> Result<f64> {
        if points.len() != self.n * self.dim {
            return Err(Error::input(format!("observable expects {} points of dimension {}", self.n, self.dim)));
        }
        Ok((self.eval)(points))
    }

    /// Perturb one coordinate at a time (uniformly, and by tiny moves) and compare with the declared constants.
    pub fn check_coefficients(&self, trials: usize, seed: u64) -> CoefficientCheck {
        let mut rng = seeded_rng(seed, 0x636f_6566);
        let mut violations = 0;
        let mut worst: f64 = 0.0;
        let mut y: Vec<f64> = (0..self.n * self.dim).map(|_| unit_f64(&mut rng)).collect();
        for t in 0..trials {
            let i = rng.gen_range(0..self.n);
            let old = y[i * self.dim..(i + 1) * self.dim].to_vec();
            let new: Vec<f64> = if t % 2 == 0 {
                (0..self.dim).map(|_| unit_f64(&mut rng)).collect()
            } else {
                old.iter().map(|v| (v + 1e-3 * (2.0 * unit_f64(&mut rng) - 1.0)).clamp(0.0, 1.0 - 1e-15)).collect()
            };
            let before = (self.eval)(&y);
            y[i * self.dim..(i + 1) * self.dim].copy_from_slice(&new);
            let after = (self.eval)(&y);
            let bound = match self.kind {
                Coefficients::Bounded => self.coefficients[i],
                Coefficients::Lipschitz => self.coefficients[i] * self.metric.distance(&old, &new),
            };
            let change = (after - before).abs();
            // rounding allowance for sums of n terms
            let slack = 1e-12 * (1.0 + before.abs());
            if change > bound + slack {
                violations += 1;
            }
            if bound > 0.0 {
                worst = worst.max(change / bound);
            }
        }
        CoefficientCheck { trials, violations, worst_ratio: worst }
    }
}

/// Variance proxy `(1/4) sum c_i^2` for independent data.
pub fn mcdiarmid_bound(c: &[f64]) -> Result<f64> {
    if c.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::input("bounded-difference coefficients must be nonnegative"));
    }
    Ok(0.25 * c.iter().map(|v| v * v).sum::<f64>())
}

/// Variance proxy `C L^2 sum L_i^2` along trajectories of a system with constant `C`, observed
/// through a map with Lipschitz constant `L`.
pub fn chazottes_gouezel_bound(l: &[f64], c_sys: f64, l_obs: f64) -> Result<f64> {
    if !(c_sys > 0.0) {
        return Err(Error::input("system constant must be positive"));
    }
    if l.iter().any(|v| !(*v >= 0.0)) || !(l_obs >= 0.0) {
        return Err(Error::input("Lipschitz coefficients must be nonnegative"));
    }
    Ok(c_sys * l_obs * l_obs * l.iter().map(|v| v * v).sum::<f64>())
}

/// Where replica samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    IidUniform { dim: usize },
    /// Fair coin flips encoded as 0 and 1.
    IidBernoulli,
    /// Orbits of a system from Lebesgue-distributed initial conditions.
    Trajectory(System),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::IidUniform { dim } => *dim,
            DataSource::IidBernoulli => 1,
            DataSource::Trajectory(s) => s.dim(),
        }
    }

    /// `n` points (row-major) for replica `replica` of experiment `seed`.
    pub fn sample(&self, n: usize, seed: u64, replica: usize) -> Result<Vec<f64>> {
        let rs = replica_seed(seed, replica);
        match self {
            DataSource::IidUniform { dim } => {
                let mut rng = seeded_rng(rs, 0x6969_64);
                Ok((0..n * dim).map(|_| unit_f64(&mut rng)).collect())
            }
            DataSource::IidBernoulli => {
                let mut rng = seeded_rng(rs, 0x6265_726e);
                Ok((0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect())
            }
            DataSource::Trajectory(s) => Ok(sample_trajectory(s, n, rs)?.into_states()),
        }
    }
}

fn replica_seed(seed: u64, replica: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(replica as u64)
}

/// One point of a tail comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub t: f64,
    /// `max(P(K - EK >= t), P(EK - K >= t))` over the replicas.
    pub empirical_tail: f64,
    pub bound_tail: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgaussianEstimate {
    pub variance_proxy_bound: f64,
    pub n_replicas: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub rows: Vec<TailRow>,
}

impl SubgaussianEstimate {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,empirical_tail,bound_tail,pass\n");
        for r in &self.rows {
            out.push_str(&format!("{:.9e},{:.9e},{:.9e},{}\n", r.t, r.empirical_tail, r.bound_tail, r.pass));
        }
        out
    }
}

/// The default grid: `points` values spanning `[0.5 s, 4 s]`.
pub fn default_t_grid(std_dev: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.5 * std_dev];
    }
    (0..points).map(|i| std_dev * (0.5 + 3.5 * i as f64 / (points - 1) as f64)).collect()
}

/// Observable values over independent replicas (parallel, returned in replica order).
pub fn replica_values(obs: &SeparatelyLipschitzObservable, source: &DataSource, replicas: usize, seed: u64) -> Result<Vec<f64>> {
    if source.dim() != obs.dim() {
        return Err(Error::input("data source and observable dimensions differ"));
    }
    (0..replicas)
        .into_par_iter()
        .map(|r| obs.evaluate(&source.sample(obs.n(), seed, r)?))
        .collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0);
    (m, var.sqrt())
}

fn two_sided_tail(values: &[f64], mean: f64, t: f64) -> f64 {
    let up = values.iter().filter(|v| **v - mean >= t).count();
    let down = values.iter().filter(|v| mean - **v >= t).count();
    up.max(down) as f64 / values.len() as f64
}

/// Monte Carlo tails of `K - EK` against `exp(-t^2 / (2 sigma^2))`.
///
/// `exact_mean` is used when known, otherwise the replica mean. An empty `t_grid` selects the
/// default 20-point grid.
pub fn empirical_tail_check(
    obs: &SeparatelyLipschitzObservable,
    source: &DataSource,
    variance_proxy: f64,
    replicas: usize,
    t_grid: &[f64],
    exact_mean: Option<f64>,
    seed: u64,
) -> Result<SubgaussianEstimate> {
    if replicas < 100 {
        return Err(Error::input("tail checks need at least 100 replicas"));
    }
    if !(variance_proxy >= 0.0) {
        return Err(Error::input("variance proxy must be nonnegative"));
    }
    let values = replica_values(obs, source, replicas, seed)?;
    let (m, sd) = mean_sd(&values);
    let mean = exact_mean.unwrap_or(m);
    let grid = if t_grid.is_empty() { default_t_grid(sd, 20) } else { t_grid.to_vec() };
    let rows = grid
        .iter()
        .filter(|t| **t > 0.0)
        .map(|&t| {
            let empirical_tail = two_sided_tail(&values, mean, t);
            let bound_tail = if variance_proxy > 0.0 { (-t * t / (2.0 * variance_proxy)).exp() } else { 0.0 };
            TailRow { t, empirical_tail, bound_tail, pass: empirical_tail <= bound_tail }
        })
        .collect();
    Ok(SubgaussianEstimate { variance_proxy_bound: variance_proxy, n_replicas: replicas, mean, std_dev: sd, rows })
}

/// Smallest system constant consistent with the observed tails.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedConstant {
    /// Fitted `C` for the observable exactly as given (any observation map folded in).
    pub c_raw: f64,
    /// `c_raw / L_obs^2`.
    pub c_normalized: f64,
    /// Grid points used (those with at least `min_exceedances` exceedances).
    pub points_used: usize,
}

/// Fit `C` such that `P(|K - EK| >= t) <= exp(-t^2 / (2 C sum L_i^2))` on the observed tails.
pub fn fit_system_constant(
    obs: &SeparatelyLipschitzObservable,
    source: &DataSource,
    replicas: usize,
    l_obs: f64,
    min_exceedances: usize,
    seed: u64,
) -> Result<FittedConstant> {
    if obs.kind() != Coefficients::Lipschitz {
        return Err(Error::input("the tower bound applies to separately Lipschitz observables"));
    }
    if !(l_obs > 0.0) {
        return Err(Error::input("observation Lipschitz constant must be positive"));
    }
    let values = replica_values(obs, source, replicas, seed)?;
    let (mean, sd) = mean_sd(&values);
    let sum_l2: f64 = obs.coefficients().iter().map(|v| v * v).sum();
    if sd == 0.0 || sum_l2 == 0.0 {
        return Err(Error::input("degenerate observable: no fluctuation"));
    }
    let mut best: f64 = 0.0;
    let mut used = 0;
    for t in default_t_grid(sd, 20) {
        let p = two_sided_tail(&values, mean, t);
        if p * replicas as f64 >= min_exceedances as f64 && p < 1.0 {
            used += 1;
            best = best.max(t * t / (2.0 * (-p.ln()) * sum_l2));
        }
    }
    if used == 0 {
        return Err(Error::input("no tail point has enough exceedances"));
    }
    Ok(FittedConstant { c_raw: best, c_normalized: best / (l_obs * l_obs), points_used: used })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirkhoffScaling {
    /// `(n, variance of the Birkhoff average)`.
    pub rows: Vec<(usize, f64)>,
    pub slope: f64,
    pub degenerate: bool,
}

/// Variance of `(1/n) sum f(Y_i)` over replicas for every `n` in `n_grid` (prefixes of one
/// replica path), and the slope of `log Var` against `log n`.
pub fn birkhoff_variance_scaling(
    source: &DataSource,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<BirkhoffScaling> {
    if n_grid.len() < 4 || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::input("n grid needs at least 4 strictly increasing positive sizes"));
    }
    if replicas < 500 {
        return Err(Error::input("variance scaling needs at least 500 replicas"));
    }
    let d = source.dim();
    let n_max = *n_grid.last().unwrap();
    let means: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let y = source.sample(n_max, seed, r)?;
            let mut out = Vec::with_capacity(n_grid.len());
            let mut acc = 0.0;
            let mut k = 0;
            for (i, p) in y.chunks_exact(d).enumerate() {
                acc += f(p);
                if i + 1 == n_grid[k] {
                    out.push(acc / n_grid[k] as f64);
                    k += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<(usize, f64)> = n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let col: Vec<f64> = means.iter().map(|m| m[k]).collect();
            let (_, sd) = mean_sd(&col);
            (n, sd * sd)
        })
        .collect();
    if rows.iter().any(|r| !(r.1 > 1e-30)) {
        return Ok(BirkhoffScaling { rows, slope: f64::NAN, degenerate: true });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.0 as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    Ok(BirkhoffScaling { slope: fit_line(&x, &y)?.slope, rows, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TorusAutomorphism;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cat() -> DataSource {
        DataSource::Trajectory(System::Automorphism(TorusAutomorphism::cat_map()))
    }

    fn cos_cos(x: &[f64]) -> f64 {
        (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos()
    }

    #[test]
    fn closed_form_proxies() {
        assert_eq!(mcdiarmid_bound(&[1.0]).unwrap(), 0.25);
        let n = 40;
        assert!((mcdiarmid_bound(&vec![1.0 / n as f64; n]).unwrap() - 1.0 / (4.0 * n as f64)).abs() < 1e-15);
        assert_eq!(mcdiarmid_bound(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(mcdiarmid_bound(&[-1.0]).is_err());
        assert_eq!(chazottes_gouezel_bound(&[0.0; 3], 1.0, 1.0).unwrap(), 0.0);
        let lip = 3.0;
        let v = chazottes_gouezel_bound(&vec![lip / n as f64; n], 1.0, 1.0).unwrap();
        assert!((v - lip * lip / n as f64).abs() < 1e-12);
    }

    #[test]
    fn tower_proxy_matches_the_tail_exponent_constant() {
        // coefficients C1 / (B n) give a tail exponent gamma3 * n * t^2 with gamma3 = B^2 / (2 C L^2 C1^2)
        let (b, c, l, c1, n) = (0.1, 2.0, 1.5, 5.0, 300usize);
        let sigma2 = chazottes_gouezel_bound(&vec![c1 / (b * n as f64); n], c, l).unwrap();
        let gamma3 = b * b / (2.0 * c * l * l * c1 * c1);
        let t = 0.3;
        assert!((t * t / (2.0 * sigma2) - gamma3 * n as f64 * t * t).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_mean_respects_hoeffding() {
        let obs = SeparatelyLipschitzObservable::bounded_mean(100, 1, 1.0, |y| y[0]).unwrap();
        let proxy = mcdiarmid_bound(obs.coefficients()).unwrap();
        let est = empirical_tail_check(&obs, &DataSource::IidBernoulli, proxy, 10_000, &[0.1], Some(0.5), 1).unwrap();
        assert!((est.rows[0].bound_tail - (-2.0f64).exp()).abs() < 1e-12);
        assert!(est.holds(), "{:?}", est.rows);
    }

    #[test]
    fn constant_observable_has_no_tails() {
        let obs = SeparatelyLipschitzObservable::bounded_mean(10, 1, 0.0, |_| 3.0).unwrap();
        let est = empirical_tail_check(&obs, &DataSource::IidUniform { dim: 1 }, 0.0, 200, &[0.01, 0.1], None, 0).unwrap();
        assert!(est.rows.iter().all(|r| r.empirical_tail == 0.0 && r.pass));
        let flat = birkhoff_variance_scaling(&DataSource::IidUniform { dim: 1 }, &|_| 1.0, &[4, 8, 16, 32], 500, 0).unwrap();
        assert!(flat.degenerate);
    }

    #[test]
    fn iid_variance_scales_like_one_over_n() {
        let grid: Vec<usize> = (6..=12).map(|k| 1 << k).collect();
        let s = birkhoff_variance_scaling(&DataSource::IidUniform { dim: 1 }, &|y| y[0], &grid, 2000, 4).unwrap();
        assert!((s.slope + 1.0).abs() < 0.1, "slope {}", s.slope);
        for (n, v) in &s.rows {
            let exact = 1.0 / (12.0 * *n as f64);
            assert!((v / exact - 1.0).abs() < 0.15);
        }
    }

    #[test]
    fn declared_coefficients_survive_perturbations() {
        let obs = SeparatelyLipschitzObservable::birkhoff_mean(50, 2, 2.0 * PI, Metric::Torus, cos_cos).unwrap();
        let check = obs.check_coefficients(1000, 3);
        assert_eq!(check.violations, 0);
        assert!(check.worst_ratio > 0.1);
        let wrong = SeparatelyLipschitzObservable::birkhoff_mean(50, 2, 0.5, Metric::Torus, cos_cos).unwrap();
        assert!(wrong.check_coefficients(1000, 3).violations > 0);
    }

    #[test]
    fn fitted_constant_is_positive_and_finite() {
        let obs = SeparatelyLipschitzObservable::birkhoff_mean(256, 2, 2.0 * PI, Metric::Torus, cos_cos).unwrap();
        let c = fit_system_constant(&obs, &cat(), 1000, 1.0, 30, 5).unwrap();
        assert!(c.c_raw > 0.0 && c.c_raw.is_finite());
        assert!(c.points_used > 3);
    }

    #[test]
    fn replicas_are_thread_count_independent() {
        let obs = SeparatelyLipschitzObservable::birkhoff_mean(64, 2, 2.0 * PI, Metric::Torus, cos_cos).unwrap();
        let a = replica_values(&obs, &cat(), 300, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| replica_values(&obs, &cat(), 300, 9).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn proxies_are_quadratically_homogeneous(c in proptest::collection::vec(0.0f64..5.0, 1..20), s in 0.0f64..10.0) {
            let scaled: Vec<f64> = c.iter().map(|v| v * s).collect();
            let a = mcdiarmid_bound(&scaled).unwrap();
            let b = s * s * mcdiarmid_bound(&c).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
            let a = chazottes_gouezel_bound(&scaled, 1.7, 0.8).unwrap();
            let b = s * s * chazottes_gouezel_bound(&c, 1.7, 0.8).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }
}
