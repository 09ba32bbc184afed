//! Young towers over a base set partitioned into cells with return times.
//!
//! A state `(x, l)` sits at level `l < R(x)` above the base point `x`; the tower map
//! climbs one level, and at the top applies the return map `T^R` and drops to level 0.
//! Projection sends `(x, l)` to `T^l x`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::Rng;

use crate::dynamics::{wrap_unit, TorusAutomorphism, TorusPoint};
use crate::error::{Error, Result};
use crate::numerics::{fit_line, seeded_rng, unit_f64};

const MASS_TOL: f64 = 1e-12;
/// Fitted decay rates above `1 - EXPONENTIAL_MARGIN` are not accepted as exponential.
pub const EXPONENTIAL_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct TowerCell {
    pub index: usize,
    pub return_time: u32,
    pub weight: f64,
    pub base_interval: Option<(f64, f64)>,
}

/// Cells with normalized weights plus the mass lost to truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerSpec {
    cells: Vec<TowerCell>,
    tail_mass: f64,
}

impl TowerSpec {
    pub fn new(cells: Vec<TowerCell>, tail_mass: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::input("tower needs at least one cell"));
        }
        if let Some(c) = cells.iter().find(|c| c.return_time == 0) {
            return Err(Error::input(format!("cell {} has return time 0", c.index)));
        }
        if cells.iter().any(|c| !(c.weight >= 0.0)) || !(tail_mass >= 0.0) {
            return Err(Error::input("cell weights and tail mass must be nonnegative"));
        }
        let total: f64 = cells.iter().map(|c| c.weight).sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::input(format!("cell weights plus tail mass sum to {total}, not 1")));
        }
        Ok(TowerSpec { cells, tail_mass })
    }

    /// Tower for the doubling map over the base [0, 1): cell `i >= 1` is
    /// `[2^-i, 2^(1-i))` with return time `i + 1` and weight `2^-i`; truncated after
    /// `max_cell` cells with the remaining `2^-max_cell` as tail mass.
    pub fn doubling(max_cell: u32) -> Self {
        let max_cell = max_cell.clamp(1, 1000);
        let cells = (1..=max_cell)
            .map(|i| {
                let w = 2f64.powi(-(i as i32));
                TowerCell { index: i as usize, return_time: i + 1, weight: w, base_interval: Some((w, 2.0 * w)) }
            })
            .collect();
        TowerSpec::new(cells, 2f64.powi(-(max_cell as i32))).expect("doubling tower is well formed")
    }

    pub fn cells(&self) -> &[TowerCell] {
        &self.cells
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Number of tower cells `(i, l)` at each level `l`.
    pub fn level_counts(&self) -> Vec<usize> {
        let top = self.cells.iter().map(|c| c.return_time).max().unwrap_or(0) as usize;
        (0..top).map(|l| self.cells.iter().filter(|c| c.return_time as usize > l).count()).collect()
    }

    pub fn total_tower_cells(&self) -> usize {
        self.cells.iter().map(|c| c.return_time as usize).sum()
    }

    /// `sum m_i R_i`, the mass of the unnormalized lifted measure.
    pub fn lifted_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.weight * c.return_time as f64).sum()
    }

    pub fn has_unit_return_times(&self) -> bool {
        self.cells.iter().any(|c| c.return_time == 1)
    }

    /// Parse lines `cell <i> <R_i> <m_i> [<a> <b>]`, optional `tail <mass>`, `#` comments.
    /// Without a `tail` line the tail mass is `1 - sum m_i`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        let mut tail = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse { line: ln + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[0] {
                "cell" => {
                    if f.len() != 4 && f.len() != 6 {
                        return Err(err("expected 'cell <i> <R_i> <m_i> [<a> <b>]'"));
                    }
                    let index = f[1].parse().map_err(|_| err("bad cell index"))?;
                    let return_time = f[2].parse().map_err(|_| err("bad return time"))?;
                    let weight = f[3].parse().map_err(|_| err("bad weight"))?;
                    let base_interval = if f.len() == 6 {
                        let a: f64 = f[4].parse().map_err(|_| err("bad interval start"))?;
                        let b: f64 = f[5].parse().map_err(|_| err("bad interval end"))?;
                        if !(a < b) {
                            return Err(err("empty base interval"));
                        }
                        Some((a, b))
                    } else {
                        None
                    };
                    cells.push(TowerCell { index, return_time, weight, base_interval });
                }
                "tail" => {
                    if f.len() != 2 {
                        return Err(err("expected 'tail <mass>'"));
                    }
                    tail = Some(f[1].parse().map_err(|_| err("bad tail mass"))?);
                }
                other => return Err(err(&format!("unknown record '{other}'"))),
            }
        }
        let tail = match tail {
            Some(t) => t,
            None => (1.0 - cells.iter().map(|c: &TowerCell| c.weight).sum::<f64>()).max(0.0),
        };
        TowerSpec::new(cells, tail)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tail {}\n", self.tail_mass);
        for c in &self.cells {
            match c.base_interval {
                Some((a, b)) => out.push_str(&format!("cell {} {} {} {} {}\n", c.index, c.return_time, c.weight, a, b)),
                None => out.push_str(&format!("cell {} {} {}\n", c.index, c.return_time, c.weight)),
            }
        }
        out
    }
}

/// `mu(R > n)`: weight of cells with return time above `n`, plus the truncated tail.
pub fn tail_distribution(spec: &TowerSpec, n: u32) -> f64 {
    spec.cells.iter().filter(|c| c.return_time > n).map(|c| c.weight).sum::<f64>() + spec.tail_mass
}

/// A tower spec with exact rational weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTowerSpec {
    pub return_times: Vec<u32>,
    pub weights: Vec<BigRational>,
    pub tail_mass: BigRational,
}

impl ExactTowerSpec {
    pub fn doubling(max_cell: u32) -> Self {
        let pow2 = |k: u32| BigRational::new(BigInt::one(), BigInt::one() << k as usize);
        ExactTowerSpec {
            return_times: (1..=max_cell).map(|i| i + 1).collect(),
            weights: (1..=max_cell).map(pow2).collect(),
            tail_mass: pow2(max_cell),
        }
    }

    pub fn tail_distribution(&self, n: u32) -> BigRational {
        self.return_times
            .iter()
            .zip(&self.weights)
            .filter(|(r, _)| **r > n)
            .fold(self.tail_mass.clone(), |acc, (_, w)| acc + w)
    }

    pub fn total_mass(&self) -> BigRational {
        self.weights.iter().fold(self.tail_mass.clone(), |acc, w| acc + w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub c: f64,
    pub tau: f64,
    pub points_used: usize,
    /// The tail vanishes identically beyond some `n` (finitely many return times).
    pub finite: bool,
    pub exponential: bool,
}

/// Least-squares fit of `ln mu(R > n) = ln c + n ln tau` over `n = 1..=n_max` with positive tail.
pub fn fit_tail_rate(spec: &TowerSpec, n_max: u32) -> Result<TailFit> {
    if n_max < 2 {
        return Err(Error::input("tail fit needs n_max >= 2"));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (1..=n_max)
        .map(|n| (n as f64, tail_distribution(spec, n)))
        .filter(|(_, t)| *t > 0.0)
        .map(|(n, t)| (n, t.ln()))
        .unzip();
    let finite = spec.tail_mass == 0.0
        && tail_distribution(spec, spec.cells.iter().map(|c| c.return_time).max().unwrap_or(0)) == 0.0;
    if xs.len() < 2 {
        if finite {
            return Ok(TailFit { c: 1.0, tau: 0.0, points_used: xs.len(), finite, exponential: true });
        }
        return Err(Error::input("too few positive tail values to fit a rate"));
    }
    let line = fit_line(&xs, &ys)?;
    let tau = line.slope.exp();
    Ok(TailFit {
        c: line.intercept.exp(),
        tau,
        points_used: xs.len(),
        finite,
        exponential: finite || tau <= 1.0 - EXPONENTIAL_MARGIN,
    })
}

/// Default fitting window: up to the largest return time, clamped to [2, 1000].
pub fn tail_fit_window(spec: &TowerSpec) -> u32 {
    spec.cells.iter().map(|c| c.return_time).max().unwrap_or(2).clamp(2, 1000)
}

/// Aperiodicity: the return times have greatest common divisor 1.
pub fn is_aperiodic(spec: &TowerSpec) -> bool {
    spec.cells.iter().map(|c| c.return_time).fold(0, gcd) == 1
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The dynamics a tower is built over.
pub trait TowerMap {
    type Point: Clone + std::fmt::Debug;

    /// The underlying map `T`.
    fn apply(&self, x: &Self::Point) -> Self::Point;

    /// The return map `T^R` applied at the top of a column of height `return_time`.
    fn return_map(&self, x: &Self::Point, return_time: u32) -> Self::Point {
        (0..return_time).fold(x.clone(), |y, _| self.apply(&y))
    }

    /// Cell of the base containing `x`, if any.
    fn cell_of(&self, spec: &TowerSpec, x: &Self::Point) -> Option<usize>;

    /// Draw a base point uniformly from a cell.
    fn sample_base<R: Rng>(&self, spec: &TowerSpec, cell: usize, rng: &mut R) -> Self::Point;

    fn distance(&self, a: &Self::Point, b: &Self::Point) -> f64;

    /// Coordinate used for invariance histograms.
    fn histogram_coordinate(&self, x: &Self::Point) -> f64;
}

fn interval_cell(spec: &TowerSpec, x: f64) -> Option<usize> {
    spec.cells.iter().position(|c| c.base_interval.is_some_and(|(a, b)| a <= x && x < b))
}

fn interval_sample<R: Rng>(spec: &TowerSpec, cell: usize, rng: &mut R) -> f64 {
    let (a, b) = spec.cells[cell].base_interval.unwrap_or((0.0, 1.0));
    let x = a + (b - a) * unit_f64(rng);
    if x < b {
        x
    } else {
        a
    }
}

fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// The doubling map on the circle.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoublingMap;

impl TowerMap for DoublingMap {
    type Point = f64;

    fn apply(&self, x: &f64) -> f64 {
        wrap_unit(2.0 * x)
    }

    fn cell_of(&self, spec: &TowerSpec, x: &f64) -> Option<usize> {
        interval_cell(spec, *x)
    }

    fn sample_base<R: Rng>(&self, spec: &TowerSpec, cell: usize, rng: &mut R) -> f64 {
        interval_sample(spec, cell, rng)
    }

    fn distance(&self, a: &f64, b: &f64) -> f64 {
        circle_distance(*a, *b)
    }

    fn histogram_coordinate(&self, x: &f64) -> f64 {
        *x
    }
}

/// The identity on [0, 1); with a single height-one cell its tower is trivial.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl TowerMap for IdentityMap {
    type Point = f64;

    fn apply(&self, x: &f64) -> f64 {
        *x
    }

    fn cell_of(&self, spec: &TowerSpec, x: &f64) -> Option<usize> {
        interval_cell(spec, *x).or(if spec.cells.len() == 1 { Some(0) } else { None })
    }

    fn sample_base<R: Rng>(&self, spec: &TowerSpec, cell: usize, rng: &mut R) -> f64 {
        interval_sample(spec, cell, rng)
    }

    fn distance(&self, a: &f64, b: &f64) -> f64 {
        circle_distance(*a, *b)
    }

    fn histogram_coordinate(&self, x: &f64) -> f64 {
        *x
    }
}

/// A toral automorphism with a synthetic single-cell base covering the whole torus.
#[derive(Debug, Clone)]
pub struct AutomorphismMap(pub TorusAutomorphism);

impl TowerMap for AutomorphismMap {
    type Point = TorusPoint;

    fn apply(&self, x: &TorusPoint) -> TorusPoint {
        self.0.step(x).expect("point dimension matches the automorphism")
    }

    fn cell_of(&self, spec: &TowerSpec, _x: &TorusPoint) -> Option<usize> {
        (spec.cells.len() == 1).then_some(0)
    }

    fn sample_base<R: Rng>(&self, _spec: &TowerSpec, _cell: usize, rng: &mut R) -> TorusPoint {
        TorusPoint::new((0..self.0.dim()).map(|_| unit_f64(rng)).collect()).expect("coordinates in [0, 1)")
    }

    fn distance(&self, a: &TorusPoint, b: &TorusPoint) -> f64 {
        crate::dynamics::torus_distance_raw(a.coords(), b.coords())
    }

    fn histogram_coordinate(&self, x: &TorusPoint) -> f64 {
        x.coords()[0]
    }
}

/// Wraps a map and shifts its return map, breaking the semi-conjugacy on purpose.
#[derive(Debug, Clone, Copy)]
pub struct CorruptedReturn<M> {
    pub inner: M,
    pub shift: f64,
}

impl<M: TowerMap<Point = f64>> TowerMap for CorruptedReturn<M> {
    type Point = f64;

    fn apply(&self, x: &f64) -> f64 {
        self.inner.apply(x)
    }

    fn return_map(&self, x: &f64, return_time: u32) -> f64 {
        wrap_unit(self.inner.return_map(x, return_time) + self.shift)
    }

    fn cell_of(&self, spec: &TowerSpec, x: &f64) -> Option<usize> {
        self.inner.cell_of(spec, x)
    }

    fn sample_base<R: Rng>(&self, spec: &TowerSpec, cell: usize, rng: &mut R) -> f64 {
        self.inner.sample_base(spec, cell, rng)
    }

    fn distance(&self, a: &f64, b: &f64) -> f64 {
        self.inner.distance(a, b)
    }

    fn histogram_coordinate(&self, x: &f64) -> f64 {
        *x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerState<P> {
    pub base: P,
    pub cell: usize,
    pub level: u32,
}

impl<P> TowerState<P> {
    pub fn new(spec: &TowerSpec, base: P, cell: usize, level: u32) -> Result<Self> {
        let c = spec.cells.get(cell).ok_or_else(|| Error::input(format!("no cell {cell}")))?;
        if level >= c.return_time {
            return Err(Error::input(format!("level {level} not below return time {}", c.return_time)));
        }
        Ok(TowerState { base, cell, level })
    }
}

/// One step of the tower map.
pub fn tower_step<M: TowerMap>(spec: &TowerSpec, map: &M, s: &TowerState<M::Point>) -> Result<TowerState<M::Point>> {
    let r = spec.cells[s.cell].return_time;
    if s.level + 1 < r {
        return Ok(TowerState { base: s.base.clone(), cell: s.cell, level: s.level + 1 });
    }
    let y = map.return_map(&s.base, r);
    let cell = map
        .cell_of(spec, &y)
        .ok_or_else(|| Error::input(format!("return point {y:?} lies outside the modeled base")))?;
    Ok(TowerState { base: y, cell, level: 0 })
}

/// Projection `pi(x, l) = T^l x`.
pub fn project<M: TowerMap>(map: &M, s: &TowerState<M::Point>) -> M::Point {
    (0..s.level).fold(s.base.clone(), |y, _| map.apply(&y))
}

/// How tower cells are weighted when sampling the lifted measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftWeighting {
    /// `m_i` times counting measure on the `R_i` levels, normalized by `sum m_i R_i`.
    Tower,
    /// Negative control: cell `i` chosen with probability `m_i`, ignoring column heights.
    IgnoreReturnTimes,
}

/// Draw states from the (normalized) lifted measure.
pub fn sample_states<M: TowerMap>(
    spec: &TowerSpec,
    map: &M,
    count: usize,
    seed: u64,
    weighting: LiftWeighting,
) -> Vec<TowerState<M::Point>> {
    let weights: Vec<f64> = spec
        .cells
        .iter()
        .map(|c| match weighting {
            LiftWeighting::Tower => c.weight * c.return_time as f64,
            LiftWeighting::IgnoreReturnTimes => c.weight,
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    let mut rng = seeded_rng(seed, 0x746f_7765);
    (0..count)
        .map(|_| {
            let u = unit_f64(&mut rng);
            let cell = cumulative.partition_point(|c| *c <= u).min(weights.len() - 1);
            let level = rng.gen_range(0..spec.cells[cell].return_time);
            let base = map.sample_base(spec, cell, &mut rng);
            TowerState { base, cell, level }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiconjugacyReport {
    pub max_discrepancy: f64,
    pub checked: usize,
    /// States whose return point left the modeled base (truncated tail).
    pub escaped: usize,
}

/// Largest `d(T(pi(s)), pi(F(s)))` over the given states.
pub fn check_semiconjugacy<M: TowerMap>(spec: &TowerSpec, map: &M, states: &[TowerState<M::Point>]) -> SemiconjugacyReport {
    let mut max_discrepancy: f64 = 0.0;
    let mut checked = 0;
    let mut escaped = 0;
    for s in states {
        let lhs = map.apply(&project(map, s));
        let r = spec.cells[s.cell].return_time;
        let rhs = if s.level + 1 < r { project(map, &TowerState { base: s.base.clone(), cell: s.cell, level: s.level + 1 }) } else {
            let y = map.return_map(&s.base, r);
            if map.cell_of(spec, &y).is_none() {
                escaped += 1;
            }
            y
        };
        max_discrepancy = max_discrepancy.max(map.distance(&lhs, &rhs));
        checked += 1;
    }
    SemiconjugacyReport { max_discrepancy, checked, escaped }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceReport {
    /// TV distance between histograms of `pi(s)` and `T(pi(s))`.
    pub tv: f64,
    pub lifted_mass: f64,
    pub samples: usize,
    pub bins: usize,
}

/// Sample the lifted measure, project it, push it once by `T`, and compare histograms.
pub fn lift_and_push_measure<M: TowerMap>(
    spec: &TowerSpec,
    map: &M,
    samples: usize,
    bins: usize,
    seed: u64,
    weighting: LiftWeighting,
) -> Result<InvarianceReport> {
    if samples == 0 || bins == 0 {
        return Err(Error::input("need positive sample and bin counts"));
    }
    let fit = fit_tail_rate(spec, tail_fit_window(spec))?;
    if !fit.exponential {
        return Err(Error::config(format!(
            "return times do not have exponential tails (fitted rate {:.4}); lifted mass not controlled",
            fit.tau
        )));
    }
    let states = sample_states(spec, map, samples, seed, weighting);
    let mut before = vec![0u64; bins];
    let mut after = vec![0u64; bins];
    let bin = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
    for s in &states {
        let y = project(map, s);
        before[bin(map.histogram_coordinate(&y))] += 1;
        after[bin(map.histogram_coordinate(&map.apply(&y)))] += 1;
    }
    let tv = before.iter().zip(&after).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>() / (2.0 * samples as f64);
    Ok(InvarianceReport { tv, lifted_mass: spec.lifted_mass(), samples, bins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn verdicts_csv(verdicts: &[Verdict]) -> String {
    let mut out = String::from("check,value,threshold,pass\n");
    for v in verdicts {
        out.push_str(&format!("{},{},{},{}\n", v.check, v.value, v.threshold, v.pass));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TowerCheckConfig {
    pub semiconjugacy_states: usize,
    pub invariance_samples: usize,
    pub bins: usize,
    /// Tail fit window; `None` uses [`tail_fit_window`].
    pub tail_fit_max: Option<u32>,
    pub seed: u64,
}

impl Default for TowerCheckConfig {
    fn default() -> Self {
        TowerCheckConfig { semiconjugacy_states: 10_000, invariance_samples: 1_000_000, bins: 64, tail_fit_max: None, seed: 0 }
    }
}

/// The standard battery of structural and measure checks for a tower.
pub fn run_tower_checks<M: TowerMap>(spec: &TowerSpec, map: &M, cfg: &TowerCheckConfig) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    let mass: f64 = spec.cells.iter().map(|c| c.weight).sum::<f64>() + spec.tail_mass;
    out.push(Verdict { check: "mass_defect".into(), value: (mass - 1.0).abs(), threshold: MASS_TOL, pass: (mass - 1.0).abs() <= MASS_TOL });
    let gcd_all = spec.cells.iter().map(|c| c.return_time).fold(0, gcd);
    out.push(Verdict { check: "return_time_gcd".into(), value: gcd_all as f64, threshold: 1.0, pass: gcd_all == 1 });
    let min_r = spec.cells.iter().map(|c| c.return_time).min().unwrap_or(0);
    out.push(Verdict { check: "min_return_time".into(), value: min_r as f64, threshold: 2.0, pass: min_r >= 2 });
    let fit = fit_tail_rate(spec, cfg.tail_fit_max.unwrap_or_else(|| tail_fit_window(spec)))?;
    out.push(Verdict { check: "tail_rate".into(), value: fit.tau, threshold: 1.0 - EXPONENTIAL_MARGIN, pass: fit.exponential });
    let states = sample_states(spec, map, cfg.semiconjugacy_states, cfg.seed, LiftWeighting::Tower);
    let sc = check_semiconjugacy(spec, map, &states);
    out.push(Verdict { check: "semiconjugacy".into(), value: sc.max_discrepancy, threshold: 1e-12, pass: sc.max_discrepancy <= 1e-12 });
    if fit.exponential {
        let inv = lift_and_push_measure(spec, map, cfg.invariance_samples, cfg.bins, cfg.seed.wrapping_add(1), LiftWeighting::Tower)?;
        out.push(Verdict { check: "invariance_tv".into(), value: inv.tv, threshold: 0.01, pass: inv.tv < 0.01 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pow2(k: u32) -> BigRational {
        BigRational::new(BigInt::one(), BigInt::one() << k as usize)
    }

    fn spec_from(return_times: &[u32], weights: &[f64]) -> TowerSpec {
        let cells = return_times
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (r, w))| TowerCell { index: i, return_time: *r, weight: *w, base_interval: None })
            .collect();
        TowerSpec::new(cells, 0.0).unwrap()
    }

    #[test]
    fn doubling_tower_mass_and_lifted_mass() {
        let spec = TowerSpec::doubling(64);
        let total: f64 = spec.cells().iter().map(|c| c.weight).sum::<f64>() + spec.tail_mass();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!((spec.lifted_mass() - 3.0).abs() < 1e-12);
        assert!(is_aperiodic(&spec));
        assert!(!spec.has_unit_return_times());
    }

    #[test]
    fn return_to_base_from_the_top_level() {
        // a cell of height two over [1/4, 1/2): (0.3, 1) goes to (T^2 0.3, 0) = (0.2, 0)
        let cells = vec![
            TowerCell { index: 0, return_time: 1, weight: 0.5, base_interval: Some((0.0, 0.25)) },
            TowerCell { index: 1, return_time: 2, weight: 0.5, base_interval: Some((0.25, 0.5)) },
        ];
        let spec = TowerSpec::new(cells, 0.0).unwrap();
        let s = TowerState::new(&spec, 0.3, 1, 1).unwrap();
        let next = tower_step(&spec, &DoublingMap, &s).unwrap();
        assert!((next.base - 0.2).abs() < 1e-15);
        assert_eq!((next.cell, next.level), (0, 0));
        assert!((project(&DoublingMap, &s) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn doubling_tower_step_on_dyadic_points() {
        let spec = TowerSpec::doubling(64);
        // 0.5625 lies in [1/2, 1), height 2; T^2(0.5625) = 0.25, which lies in [1/4, 1/2)
        let s = TowerState::new(&spec, 0.5625, 0, 1).unwrap();
        let next = tower_step(&spec, &DoublingMap, &s).unwrap();
        assert_eq!(next, TowerState { base: 0.25, cell: 1, level: 0 });
        let climb = tower_step(&spec, &DoublingMap, &TowerState::new(&spec, 0.3, 1, 0).unwrap()).unwrap();
        assert_eq!(climb.level, 1);
        assert!(TowerState::new(&spec, 0.3, 1, 3).is_err());
    }

    #[test]
    fn cat_map_fixed_point_in_a_synthetic_tower() {
        let spec = spec_from(&[3], &[1.0]);
        let map = AutomorphismMap(TorusAutomorphism::cat_map());
        let origin = TorusPoint::new(vec![0.0, 0.0]).unwrap();
        let s = TowerState::new(&spec, origin.clone(), 0, 1).unwrap();
        assert_eq!(tower_step(&spec, &map, &s).unwrap(), TowerState { base: origin.clone(), cell: 0, level: 2 });
        let top = TowerState::new(&spec, origin.clone(), 0, 2).unwrap();
        assert_eq!(tower_step(&spec, &map, &top).unwrap(), TowerState { base: origin, cell: 0, level: 0 });
    }

    #[test]
    fn tail_examples() {
        assert!((tail_distribution(&TowerSpec::doubling(64), 3) - 0.25).abs() < 1e-15);
        assert_eq!(tail_distribution(&spec_from(&[2, 3], &[0.5, 0.5]), 2), 0.5);
    }

    #[test]
    fn exact_doubling_tail_is_a_power_of_two() {
        let exact = ExactTowerSpec::doubling(64);
        assert_eq!(exact.total_mass(), BigRational::one());
        for n in 1..=40u32 {
            // mu(R > n) = 2^(1-n)
            assert_eq!(exact.tail_distribution(n), pow2(n) * BigRational::from_integer(2.into()));
        }
    }

    #[test]
    fn tail_rate_of_the_doubling_tower() {
        let fit = fit_tail_rate(&TowerSpec::doubling(64), 40).unwrap();
        assert!((fit.tau - 0.5).abs() < 1e-6);
        assert!((fit.c - 2.0).abs() < 1e-4);
        assert!(fit.exponential);
    }

    #[test]
    fn polynomial_tails_are_not_exponential() {
        let n = 10_000usize;
        let z: f64 = (1..=n).map(|i| (i as f64).powi(-2)).sum();
        let cells = (1..=n)
            .map(|i| TowerCell { index: i, return_time: i as u32, weight: (i as f64).powi(-2) / z, base_interval: None })
            .collect();
        let tail = 1.0 - (1..=n).map(|i| (i as f64).powi(-2) / z).sum::<f64>();
        let spec = TowerSpec::new(cells, tail.max(0.0)).unwrap();
        let fit = fit_tail_rate(&spec, 1000).unwrap();
        assert!((fit.tau - 1.0).abs() < 0.05, "tau = {}", fit.tau);
        assert!(!fit.exponential);
        let err = lift_and_push_measure(&spec, &IdentityMap, 100, 8, 0, LiftWeighting::Tower).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn level_counts_of_a_small_tower() {
        let spec = spec_from(&[2, 4, 3, 4], &[0.25; 4]);
        assert_eq!(spec.level_counts(), vec![4, 4, 3, 2]);
        assert_eq!(spec.total_tower_cells(), 13);
    }

    #[test]
    fn aperiodicity_uses_the_gcd() {
        assert!(!is_aperiodic(&spec_from(&[2, 4], &[0.5, 0.5])));
        assert!(is_aperiodic(&spec_from(&[2, 3], &[0.5, 0.5])));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TowerSpec::new(vec![TowerCell { index: 0, return_time: 2, weight: 0.9, base_interval: None }], 0.0).is_err());
        assert!(TowerSpec::new(vec![TowerCell { index: 0, return_time: 0, weight: 1.0, base_interval: None }], 0.0).is_err());
        assert!(spec_from(&[1, 2], &[0.5, 0.5]).has_unit_return_times());
    }

    #[test]
    fn semiconjugacy_holds_and_corruption_is_detected() {
        let spec = TowerSpec::doubling(64);
        let states = sample_states(&spec, &DoublingMap, 10_000, 1, LiftWeighting::Tower);
        let ok = check_semiconjugacy(&spec, &DoublingMap, &states);
        assert!(ok.max_discrepancy <= 1e-12);
        let bad = CorruptedReturn { inner: DoublingMap, shift: 1e-3 };
        let flagged = check_semiconjugacy(&spec, &bad, &states);
        assert!(flagged.max_discrepancy > 1e-4);
    }

    #[test]
    fn lifted_measure_projects_to_an_invariant_measure() {
        let spec = TowerSpec::doubling(64);
        let rep = lift_and_push_measure(&spec, &DoublingMap, 1_000_000, 64, 2, LiftWeighting::Tower).unwrap();
        assert!(rep.tv < 0.01, "tv = {}", rep.tv);
        let control = lift_and_push_measure(&spec, &DoublingMap, 1_000_000, 64, 2, LiftWeighting::IgnoreReturnTimes).unwrap();
        assert!(control.tv >= 0.05, "control tv = {}", control.tv);
    }

    #[test]
    fn trivial_tower_projects_exactly() {
        let cells = vec![TowerCell { index: 0, return_time: 1, weight: 1.0, base_interval: Some((0.0, 1.0)) }];
        let spec = TowerSpec::new(cells, 0.0).unwrap();
        let rep = lift_and_push_measure(&spec, &IdentityMap, 10_000, 16, 3, LiftWeighting::Tower).unwrap();
        assert_eq!(rep.tv, 0.0);
    }

    #[test]
    fn spec_text_roundtrip() {
        let spec = TowerSpec::doubling(10);
        assert_eq!(TowerSpec::parse(&spec.to_text()).unwrap(), spec);
        let parsed = TowerSpec::parse("# two cells\ncell 0 2 0.5\ncell 1 3 0.5\n").unwrap();
        assert_eq!(parsed.tail_mass(), 0.0);
        assert!(matches!(TowerSpec::parse("cell 0 2"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn checks_pass_for_the_doubling_tower() {
        let v = run_tower_checks(&TowerSpec::doubling(64), &DoublingMap, &TowerCheckConfig::default()).unwrap();
        assert!(v.iter().all(|v| v.pass), "{v:?}");
        assert!(verdicts_csv(&v).starts_with("check,value,threshold,pass\n"));
    }

    proptest! {
        #[test]
        fn tail_is_nonincreasing(rs in proptest::collection::vec(1u32..20, 1..12), n in 0u32..25) {
            let w = 1.0 / rs.len() as f64;
            let weights = vec![w; rs.len()];
            let cells = rs.iter().zip(&weights).enumerate()
                .map(|(i, (r, w))| TowerCell { index: i, return_time: *r, weight: *w, base_interval: None })
                .collect();
            if let Ok(spec) = TowerSpec::new(cells, 0.0) {
                prop_assert!(tail_distribution(&spec, n + 1) <= tail_distribution(&spec, n));
            }
        }

        #[test]
        fn projection_commutes_with_the_tower_map(u in 0.0f64..1.0, level_frac in 0.0f64..1.0) {
            let spec = TowerSpec::doubling(64);
            let x = 0.5 + 0.5 * u;
            let r = spec.cells()[0].return_time;
            let level = ((level_frac * r as f64) as u32).min(r - 1);
            let s = TowerState::new(&spec, x, 0, level).unwrap();
            if let Ok(next) = tower_step(&spec, &DoublingMap, &s) {
                prop_assert_eq!(project(&DoublingMap, &next), DoublingMap.apply(&project(&DoublingMap, &s)));
            }
        }
    }
}
