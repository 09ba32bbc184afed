//! Metric entropy: explicit nets of Hölder balls, exact covering numbers of small metric
//! spaces, Dudley entropy integrals and the constants of the generalization rates.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypothesis::ModelConfig;
use crate::numerics::{adaptive_integrate, fit_line, seeded_rng};

/// Ball of radius `radius` in `C^{k,alpha}([0,1]^d)` under `||f||_{C^k} + max [D_beta f]_alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderBall {
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub radius: f64,
}

impl HolderBall {
    pub fn lipschitz(d: usize, radius: f64) -> Self {
        HolderBall { d, k: 0, alpha: 1.0, radius }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.d) {
            return Err(Error::input("nets are constructed for d in {1, 2}"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.radius > 0.0) {
            return Err(Error::input("Hölder exponent must lie in (0, 1] and the radius must be positive"));
        }
        Ok(())
    }
}

/// Count sequences of `len` levels in `[-k_max, k_max]` whose consecutive entries differ by at
/// most `step`; returns the natural log of the count.
fn log_count_paths(len: usize, k_max: i64, step: i64) -> f64 {
    let w = (2 * k_max + 1) as usize;
    let mut counts = vec![1.0f64; w];
    let mut log_scale = 0.0;
    for _ in 1..len {
        let mut next = vec![0.0; w];
        for (j, nv) in next.iter_mut().enumerate() {
            let lo = j.saturating_sub(step as usize);
            let hi = (j + step as usize).min(w - 1);
            *nv = counts[lo..=hi].iter().sum();
        }
        let m = next.iter().cloned().fold(0.0, f64::max);
        next.iter_mut().for_each(|v| *v /= m);
        log_scale += m.ln();
        counts = next;
    }
    log_scale + counts.iter().sum::<f64>().ln()
}

/// A sup-norm net of a `C^{0,alpha}` ball: piecewise constant functions on a uniform grid of
/// `m^d` cells whose levels are multiples of `delta` in `[-k_max delta, k_max delta]`, with levels
/// of consecutive cells in boustrophedon order differing by at most two steps.
///
/// The members are enumerated implicitly; the size comes from a transfer count.
#[derive(Debug, Clone, PartialEq)]
pub struct SupNet {
    pub ball: HolderBall,
    pub epsilon: f64,
    /// Cells per axis.
    pub m: usize,
    pub delta: f64,
    pub k_max: i64,
    /// True for the single-member net `{0}`.
    pub trivial: bool,
    log_size: f64,
}

const MAX_STEP: i64 = 2;

impl SupNet {
    pub fn log_size(&self) -> f64 {
        self.log_size
    }

    pub fn size(&self) -> f64 {
        self.log_size.exp()
    }

    pub fn cells(&self) -> usize {
        if self.trivial {
            1
        } else {
            self.m.pow(self.ball.d as u32)
        }
    }

    /// Cell index (row-major) of position `p` along the boustrophedon path.
    pub fn path_cell(&self, p: usize) -> usize {
        if self.ball.d == 1 {
            return p;
        }
        let (row, col) = (p / self.m, p % self.m);
        let col = if row % 2 == 0 { col } else { self.m - 1 - col };
        row * self.m + col
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        let h = 1.0 / self.m as f64;
        if self.ball.d == 1 {
            vec![(cell as f64 + 0.5) * h]
        } else {
            vec![((cell / self.m) as f64 + 0.5) * h, ((cell % self.m) as f64 + 0.5) * h]
        }
    }

    /// Whether a level table (row-major over cells) is a member of the net.
    pub fn contains(&self, levels: &[i64]) -> bool {
        if self.trivial {
            return levels.iter().all(|l| *l == 0);
        }
        if levels.len() != self.cells() || levels.iter().any(|l| l.abs() > self.k_max) {
            return false;
        }
        (1..levels.len()).all(|p| (levels[self.path_cell(p)] - levels[self.path_cell(p - 1)]).abs() <= MAX_STEP)
    }

    /// The member obtained by rounding cell-center values to the level lattice.
    pub fn representative(&self, f: &dyn Fn(&[f64]) -> f64) -> Vec<i64> {
        if self.trivial {
            return vec![0];
        }
        (0..self.cells()).map(|c| (f(&self.cell_center(c)) / self.delta).round() as i64).collect()
    }

    /// Value of a member at `x`.
    pub fn member_value(&self, levels: &[i64], x: &[f64]) -> f64 {
        if self.trivial {
            return 0.0;
        }
        let idx = |t: f64| ((t * self.m as f64).floor() as usize).min(self.m - 1);
        let cell = if self.ball.d == 1 { idx(x[0]) } else { idx(x[0]) * self.m + idx(x[1]) };
        levels[cell] as f64 * self.delta
    }
}

/// Construct the sup-norm `epsilon`-net of a `C^{0,alpha}` ball.
///
/// The mesh satisfies `r (h sqrt(d) / 2)^alpha <= epsilon / 2` and the level pitch is `epsilon`,
/// so rounding the center values of a ball member gives a member within `epsilon`.
pub fn build_sup_net(ball: HolderBall, epsilon: f64) -> Result<SupNet> {
    ball.validate()?;
    if ball.k != 0 {
        return Err(Error::input("explicit sup-norm nets are built for k = 0 (derivative nets supply higher k)"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::input("epsilon must be positive"));
    }
    let r = ball.radius;
    if epsilon >= r {
        return Ok(SupNet { ball, epsilon, m: 1, delta: epsilon, k_max: 0, trivial: true, log_size: 0.0 });
    }
    let d = ball.d as f64;
    let h_max = (2.0 / d.sqrt()) * (epsilon / (2.0 * r)).powf(1.0 / ball.alpha);
    let m = (1.0 / h_max).ceil().max(1.0) as usize;
    let delta = epsilon;
    let k_max = (r / delta).round() as i64;
    let cells = m.pow(ball.d as u32);
    let log_size = log_count_paths(cells, k_max, MAX_STEP);
    Ok(SupNet { ball, epsilon, m, delta, k_max, trivial: false, log_size })
}

/// A piecewise linear function on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Integral from 0 up to each knot.
    cumulative: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::input("knots must run from 0 to 1 with one value each"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("knots must be strictly increasing"));
        }
        let mut cumulative = vec![0.0];
        for i in 1..knots.len() {
            let last = cumulative[i - 1];
            cumulative.push(last + 0.5 * (values[i] + values[i - 1]) * (knots[i] - knots[i - 1]));
        }
        Ok(PiecewiseLinear { knots, values, cumulative })
    }

    fn segment(&self, x: f64) -> usize {
        self.knots.partition_point(|k| *k <= x).clamp(1, self.knots.len() - 1) - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn value(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let t = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    pub fn slope(&self, x: f64) -> f64 {
        let i = self.segment(x);
        (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i])
    }

    pub fn integral(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let v = self.value(x);
        self.cumulative[i] + 0.5 * (self.values[i] + v) * (x - self.knots[i])
    }

    pub fn lipschitz(&self) -> f64 {
        (1..self.knots.len())
            .map(|i| ((self.values[i] - self.values[i - 1]) / (self.knots[i] - self.knots[i - 1])).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// `(min, max)` over `[a, b]`.
    pub fn range(&self, a: f64, b: f64) -> (f64, f64) {
        let mut lo = self.value(a).min(self.value(b));
        let mut hi = self.value(a).max(self.value(b));
        for (k, v) in self.knots.iter().zip(&self.values) {
            if *k > a && *k < b {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        (lo, hi)
    }

    fn scaled(&self, s: f64, shift: f64) -> Self {
        PiecewiseLinear::new(self.knots.clone(), self.values.iter().map(|v| s * (v + shift)).collect()).expect("same knots")
    }

    /// Sup of `|c + integral_0^x|` over [0, 1]: extrema sit at the ends or where the integrand vanishes.
    fn antiderivative_sup(&self, c: f64) -> f64 {
        let mut pts = vec![0.0, 1.0];
        for i in 0..self.knots.len() - 1 {
            let (a, b) = (self.values[i], self.values[i + 1]);
            pts.push(self.knots[i]);
            if a * b < 0.0 {
                pts.push(self.knots[i] + a / (a - b) * (self.knots[i + 1] - self.knots[i]));
            }
        }
        pts.iter().map(|x| (c + self.integral(*x)).abs()).fold(0.0, f64::max)
    }
}

fn random_pl<R: Rng>(rng: &mut R) -> PiecewiseLinear {
    let inner = rng.gen_range(1..12);
    let mut knots: Vec<f64> = (0..inner).map(|_| rng.gen::<f64>()).collect();
    knots.push(0.0);
    knots.push(1.0);
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut values = vec![rng.gen::<f64>() * 2.0 - 1.0];
    for i in 1..knots.len() {
        let slope = 2.0 * rng.gen::<f64>() - 1.0;
        let last = values[i - 1];
        values.push(last + slope * (knots[i] - knots[i - 1]));
    }
    PiecewiseLinear::new(knots, values).expect("sorted distinct knots")
}

/// A random member of a Lipschitz ball: piecewise linear in d = 1, a sum of piecewise linear
/// functions of each coordinate in d = 2. Norms are computed exactly and rescaled to lie in
/// `[radius / 2, radius]`.
#[derive(Debug, Clone, PartialEq)]
pub enum LipschitzProbe {
    Line(PiecewiseLinear),
    Separable(PiecewiseLinear, PiecewiseLinear),
}

impl LipschitzProbe {
    pub fn random<R: Rng>(d: usize, radius: f64, rng: &mut R) -> Self {
        let target = radius * (0.5 + 0.5 * rng.gen::<f64>());
        if d == 1 {
            let g = random_pl(rng);
            let norm = g.sup() + g.lipschitz();
            LipschitzProbe::Line(g.scaled(target / norm, 0.0))
        } else {
            let (gx, gy) = (random_pl(rng), random_pl(rng));
            let probe = LipschitzProbe::Separable(gx.clone(), gy.clone());
            let s = target / probe.norm();
            LipschitzProbe::Separable(gx.scaled(s, 0.0), gy.scaled(s, 0.0))
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            LipschitzProbe::Line(g) => g.value(x[0]),
            LipschitzProbe::Separable(gx, gy) => gx.value(x[0]) + gy.value(x[1]),
        }
    }

    /// `sup |f| + Lip(f)` (Euclidean gradient norm).
    pub fn norm(&self) -> f64 {
        match self {
            LipschitzProbe::Line(g) => g.sup() + g.lipschitz(),
            LipschitzProbe::Separable(gx, gy) => {
                let (a, b) = (gx.range(0.0, 1.0), gy.range(0.0, 1.0));
                (a.0 + b.0).abs().max((a.1 + b.1).abs()) + gx.lipschitz().hypot(gy.lipschitz())
            }
        }
    }

    /// Exact sup distance to a net member.
    pub fn distance_to(&self, net: &SupNet, levels: &[i64]) -> f64 {
        if net.trivial {
            return match self {
                LipschitzProbe::Line(g) => g.sup(),
                LipschitzProbe::Separable(gx, gy) => {
                    let (a, b) = (gx.range(0.0, 1.0), gy.range(0.0, 1.0));
                    (a.0 + b.0).abs().max((a.1 + b.1).abs())
                }
            };
        }
        let h = 1.0 / net.m as f64;
        let mut worst: f64 = 0.0;
        for cell in 0..net.cells() {
            let c = levels[cell] as f64 * net.delta;
            let (lo, hi) = match self {
                LipschitzProbe::Line(g) => g.range(cell as f64 * h, (cell + 1) as f64 * h),
                LipschitzProbe::Separable(gx, gy) => {
                    let (i, j) = (cell / net.m, cell % net.m);
                    let a = gx.range(i as f64 * h, (i + 1) as f64 * h);
                    let b = gy.range(j as f64 * h, (j + 1) as f64 * h);
                    (a.0 + b.0, a.1 + b.1)
                }
            };
            worst = worst.max((lo - c).abs()).max((hi - c).abs());
        }
        worst
    }
}

/// Size and probe coverage of one constructed net.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringReport {
    pub epsilon: f64,
    pub log_net_size: f64,
    /// `gamma epsilon^{-d/(alpha+k)}` when a `gamma` is supplied.
    pub log_bound: Option<f64>,
    pub verified_fraction: f64,
    pub worst_distance: f64,
}

impl CoveringReport {
    pub fn csv(rows: &[CoveringReport]) -> String {
        let mut out = String::from("epsilon,log_net_size,log_bound,verified_fraction\n");
        for r in rows {
            let b = r.log_bound.map(|v| format!("{v:.9e}")).unwrap_or_default();
            out.push_str(&format!("{:.9e},{:.9e},{},{:.6}\n", r.epsilon, r.log_net_size, b, r.verified_fraction));
        }
        out
    }
}

/// Build the net for a Lipschitz ball and check it on `probes` random ball members.
pub fn verify_sup_net(ball: HolderBall, epsilon: f64, probes: usize, gamma: Option<f64>, seed: u64) -> Result<CoveringReport> {
    if ball.k != 0 || ball.alpha != 1.0 {
        return Err(Error::input("probe families are Lipschitz (k = 0, alpha = 1)"));
    }
    let net = build_sup_net(ball, epsilon)?;
    let results: Vec<(bool, f64)> = (0..probes)
        .into_par_iter()
        .map(|p| {
            let mut rng = seeded_rng(seed, p as u64);
            let probe = LipschitzProbe::random(ball.d, ball.radius, &mut rng);
            let levels = net.representative(&|x| probe.value(x));
            let dist = probe.distance_to(&net, &levels);
            (net.contains(&levels) && dist <= epsilon * (1.0 + 1e-12), dist)
        })
        .collect();
    let ok = results.iter().filter(|r| r.0).count();
    let exponent = ball.d as f64 / (ball.alpha + ball.k as f64);
    Ok(CoveringReport {
        epsilon,
        log_net_size: net.log_size(),
        log_bound: gamma.map(|g| g * epsilon.powf(-exponent)),
        verified_fraction: if probes == 0 { 1.0 } else { ok as f64 / probes as f64 },
        worst_distance: results.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// Fit `log N(eps) ~ gamma eps^{-s}`: returns `(s, gamma)` from a log-log regression of the
/// entropy on `1/eps`, with `gamma` the smallest constant dominating every point.
pub fn fit_entropy_exponent(reports: &[CoveringReport]) -> Result<(f64, f64)> {
    let pts: Vec<&CoveringReport> = reports.iter().filter(|r| r.log_net_size > 0.0).collect();
    if pts.len() < 2 {
        return Err(Error::input("need two nets with nontrivial size"));
    }
    let x: Vec<f64> = pts.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
    let y: Vec<f64> = pts.iter().map(|r| r.log_net_size.ln()).collect();
    let s = fit_line(&x, &y)?.slope;
    let gamma = pts.iter().map(|r| r.log_net_size * r.epsilon.powf(s)).fold(0.0, f64::max);
    Ok((s, gamma))
}

/// A `C^1`-norm net of a `C^{1,alpha}` ball on [0, 1]: antiderivatives `c + integral g` of members
/// `g` of an `epsilon/2` sup-net of the derivative ball, with `c` from an `epsilon/4`-net of
/// `[-radius, radius]`.
#[derive(Debug, Clone, PartialEq)]
pub struct C1Net {
    pub epsilon: f64,
    pub derivative_net: SupNet,
    pub constants: Vec<f64>,
    pub trivial: bool,
}

impl C1Net {
    pub fn log_size(&self) -> f64 {
        if self.trivial {
            0.0
        } else {
            self.derivative_net.log_size() + (self.constants.len() as f64).ln()
        }
    }

    pub fn nearest_constant(&self, v: f64) -> f64 {
        *self.constants.iter().min_by(|a, b| (*a - v).abs().total_cmp(&(*b - v).abs())).expect("nonempty constant net")
    }

    /// Value and derivative of the member `(levels, c)` at `x`.
    pub fn member(&self, levels: &[i64], c: f64, x: f64) -> (f64, f64) {
        let net = &self.derivative_net;
        let h = 1.0 / net.m as f64;
        let cell = ((x / h).floor() as usize).min(net.m - 1);
        let full: f64 = levels[..cell].iter().map(|l| *l as f64 * net.delta * h).sum();
        let g = levels[cell] as f64 * net.delta;
        (c + full + g * (x - cell as f64 * h), g)
    }
}

pub fn build_c1_net(ball: HolderBall, epsilon: f64) -> Result<C1Net> {
    ball.validate()?;
    if ball.d != 1 || ball.k != 1 {
        return Err(Error::input("C1 nets are built for C^{1,alpha} balls on [0, 1]"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::input("epsilon must be positive"));
    }
    let r = ball.radius;
    let derivative_ball = HolderBall { d: 1, k: 0, alpha: ball.alpha, radius: r };
    let derivative_net = build_sup_net(derivative_ball, 0.5 * epsilon)?;
    if epsilon >= r {
        return Ok(C1Net { epsilon, derivative_net, constants: vec![0.0], trivial: true });
    }
    let count = (4.0 * r / epsilon).ceil() as usize;
    let constants = (0..count).map(|j| -r + (2 * j + 1) as f64 * epsilon / 4.0).map(|c| c.min(r)).collect();
    Ok(C1Net { epsilon, derivative_net, constants, trivial: false })
}

/// A random member of a `C^{1,1}` ball: `F = c + integral g` with `g` piecewise linear, rescaled so
/// that `max(sup|F|, sup|F'|) + Lip(F')` lies in `[radius / 2, radius]`.
#[derive(Debug, Clone, PartialEq)]
pub struct C1Probe {
    pub c: f64,
    pub derivative: PiecewiseLinear,
}

impl C1Probe {
    pub fn random<R: Rng>(radius: f64, rng: &mut R) -> Self {
        let g = random_pl(rng);
        let c = 2.0 * rng.gen::<f64>() - 1.0;
        let probe = C1Probe { c, derivative: g };
        let s = radius * (0.5 + 0.5 * rng.gen::<f64>()) / probe.norm();
        C1Probe { c: c * s, derivative: probe.derivative.scaled(s, 0.0) }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.c + self.derivative.integral(x)
    }

    pub fn norm(&self) -> f64 {
        self.derivative.antiderivative_sup(self.c).max(self.derivative.sup()) + self.derivative.lipschitz()
    }

    /// Exact `C^1` distance `max(sup|F - G|, sup|F' - G'|)` to a net member.
    pub fn distance_to(&self, net: &C1Net, levels: &[i64], c: f64) -> f64 {
        if net.trivial {
            return self.derivative.antiderivative_sup(self.c).max(self.derivative.sup());
        }
        let m = net.derivative_net.m;
        let h = 1.0 / m as f64;
        let mut pts: Vec<f64> = (0..=m).map(|i| i as f64 * h).chain(self.derivative.knots().iter().copied()).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut worst: f64 = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let cell = ((mid / h).floor() as usize).min(m - 1);
            let g = levels[cell] as f64 * net.derivative_net.delta;
            // on (a, b) the derivative gap is linear and the value gap quadratic
            let ea = self.derivative.value(a) - g;
            let eb = self.derivative.value(b) - g;
            worst = worst.max(ea.abs()).max(eb.abs());
            let gap = |x: f64| self.value(x) - net.member(levels, c, x).0;
            worst = worst.max(gap(a).abs()).max(gap(b.min(1.0)).abs());
            if ea * eb < 0.0 {
                let root = a + ea / (ea - eb) * (b - a);
                worst = worst.max(gap(root).abs());
            }
        }
        worst
    }
}

pub fn verify_c1_net(ball: HolderBall, epsilon: f64, probes: usize, seed: u64) -> Result<CoveringReport> {
    if ball.alpha != 1.0 {
        return Err(Error::input("C1 probes are C^{1,1} functions"));
    }
    let net = build_c1_net(ball, epsilon)?;
    let results: Vec<(bool, f64)> = (0..probes)
        .into_par_iter()
        .map(|p| {
            let mut rng = seeded_rng(seed, 0x6331_0000 + p as u64);
            let probe = C1Probe::random(ball.radius, &mut rng);
            let (levels, c) = if net.trivial {
                (vec![0], 0.0)
            } else {
                (net.derivative_net.representative(&|x| probe.derivative.value(x[0])), net.nearest_constant(probe.c))
            };
            let dist = probe.distance_to(&net, &levels, c);
            let member = net.trivial || net.derivative_net.contains(&levels);
            (member && dist <= epsilon * (1.0 + 1e-12), dist)
        })
        .collect();
    let ok = results.iter().filter(|r| r.0).count();
    Ok(CoveringReport {
        epsilon,
        log_net_size: net.log_size(),
        log_bound: None,
        verified_fraction: if probes == 0 { 1.0 } else { ok as f64 / probes as f64 },
        worst_distance: results.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// A finite metric space given by its distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMetric {
    dist: Vec<Vec<f64>>,
}

impl FiniteMetric {
    pub fn new(dist: Vec<Vec<f64>>) -> Result<Self> {
        let n = dist.len();
        if n == 0 || n > 20 || dist.iter().any(|r| r.len() != n) {
            return Err(Error::input("distance matrix must be square with 1 to 20 points"));
        }
        for i in 0..n {
            if dist[i][i] != 0.0 {
                return Err(Error::input("distance to self must vanish"));
            }
            for j in 0..n {
                if dist[i][j] != dist[j][i] || dist[i][j] < 0.0 || (i != j && dist[i][j] == 0.0) {
                    return Err(Error::input("distances must be symmetric and positive off the diagonal"));
                }
                for k in 0..n {
                    if dist[i][k] > dist[i][j] + dist[j][k] + 1e-12 {
                        return Err(Error::input("triangle inequality fails"));
                    }
                }
            }
        }
        Ok(FiniteMetric { dist })
    }

    /// Random space: Euclidean points in the plane, or shortest paths on a random weighted graph.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut dist = vec![vec![0.0; n]; n];
        if rng.gen::<bool>() {
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
            for i in 0..n {
                for j in 0..n {
                    dist[i][j] = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
                }
            }
        } else {
            for i in 0..n {
                for j in i + 1..n {
                    let w = 0.05 + rng.gen::<f64>();
                    dist[i][j] = w;
                    dist[j][i] = w;
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if dist[i][k] + dist[k][j] < dist[i][j] {
                            dist[i][j] = dist[i][k] + dist[k][j];
                        }
                    }
                }
            }
        }
        FiniteMetric { dist }
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i][j]
    }

    fn balls(&self, subset: &[usize], eps: f64) -> Vec<u32> {
        subset
            .iter()
            .map(|&c| subset.iter().enumerate().filter(|(_, &p)| self.dist[c][p] <= eps).fold(0u32, |m, (k, _)| m | (1 << k)))
            .collect()
    }

    /// Minimal number of centers from `subset` covering `subset` with closed `eps`-balls.
    pub fn covering_number(&self, subset: &[usize], eps: f64) -> usize {
        let n = subset.len();
        if n == 0 {
            return 0;
        }
        let balls = self.balls(subset, eps);
        let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        let mut cover = vec![0u32; 1 << n];
        let mut best = n;
        for mask in 1usize..(1 << n) {
            let low = mask.trailing_zeros() as usize;
            cover[mask] = cover[mask & (mask - 1)] | balls[low];
            let size = mask.count_ones() as usize;
            if size < best && cover[mask] == full {
                best = size;
            }
        }
        best
    }

    /// Greedy cover size (largest uncovered ball first).
    pub fn greedy_covering_number(&self, subset: &[usize], eps: f64) -> usize {
        let n = subset.len();
        let balls = self.balls(subset, eps);
        let full: u32 = (1u32 << n) - 1;
        let mut covered = 0u32;
        let mut count = 0;
        while covered != full {
            let best = balls.iter().max_by_key(|b| (*b & !covered).count_ones()).expect("nonempty");
            covered |= best;
            count += 1;
        }
        count
    }
}

/// Outcome of checking `N(T', eps) <= N(T, eps / 2)` on random spaces and subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetCoveringReport {
    pub spaces: usize,
    pub cases: usize,
    pub violations: usize,
    /// Cases where the greedy cover exceeded `exact * (1 + ln n)`.
    pub greedy_violations: usize,
}

impl SubsetCoveringReport {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.greedy_violations == 0
    }
}

pub fn covering_subset_inequality_check(spaces: usize, max_points: usize, seed: u64) -> Result<SubsetCoveringReport> {
    if !(2..=12).contains(&max_points) {
        return Err(Error::input("exhaustive covers are limited to 2..12 points"));
    }
    let per_space: Vec<(usize, usize, usize)> = (0..spaces)
        .into_par_iter()
        .map(|s| {
            let mut rng = seeded_rng(seed, 0x636f_7600 + s as u64);
            let n = rng.gen_range(2..=max_points);
            let space = FiniteMetric::random(n, &mut rng);
            let all: Vec<usize> = (0..n).collect();
            let mut subsets = vec![all.clone(), vec![rng.gen_range(0..n)]];
            for _ in 0..4 {
                let sub: Vec<usize> = all.iter().copied().filter(|_| rng.gen::<bool>()).collect();
                if !sub.is_empty() {
                    subsets.push(sub);
                }
            }
            let mut eps: Vec<f64> = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let d = space.distance(i, j);
                    eps.extend([d, 2.0 * d, 0.999 * d, 1.999 * d]);
                }
            }
            eps.push(1e-3);
            let (mut cases, mut bad, mut greedy_bad) = (0, 0, 0);
            for sub in &subsets {
                for &e in &eps {
                    cases += 1;
                    let exact = space.covering_number(sub, e);
                    if exact > space.covering_number(&all, e / 2.0) {
                        bad += 1;
                    }
                    let greedy = space.greedy_covering_number(sub, e);
                    if greedy < exact || greedy as f64 > exact as f64 * (1.0 + (sub.len() as f64).ln()) {
                        greedy_bad += 1;
                    }
                }
            }
            (cases, bad, greedy_bad)
        })
        .collect();
    Ok(SubsetCoveringReport {
        spaces,
        cases: per_space.iter().map(|p| p.0).sum(),
        violations: per_space.iter().map(|p| p.1).sum(),
        greedy_violations: per_space.iter().map(|p| p.2).sum(),
    })
}

/// `integral_0^delta sqrt(gamma eps^{-s}) d eps = sqrt(gamma) delta^{1 - s/2} / (1 - s/2)`.
pub fn dudley_integral(gamma: f64, s: f64, delta: f64) -> Result<f64> {
    if !(gamma >= 0.0) || !(delta >= 0.0) || !s.is_finite() {
        return Err(Error::input("gamma and delta must be nonnegative"));
    }
    if s >= 2.0 {
        return Err(Error::DivergentIntegral(s));
    }
    Ok(gamma.sqrt() * delta.powf(1.0 - s / 2.0) / (1.0 - s / 2.0))
}

/// `integral_0^delta sqrt(log_n(eps)) d eps` by adaptive quadrature on dyadic pieces
/// `[delta 2^{-j-1}, delta 2^{-j}]`, with the remaining tail extrapolated geometrically.
pub fn dudley_quadrature(log_n: &dyn Fn(f64) -> f64, delta: f64, tol: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let f = |e: f64| log_n(e).max(0.0).sqrt();
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    let mut hi = delta;
    for _ in 0..4000 {
        let lo = 0.5 * hi;
        let piece = adaptive_integrate(&f, lo, hi, tol * 1e-3);
        total += piece;
        if let Some(p) = prev {
            if p > 0.0 {
                let ratio = piece / p;
                if ratio < 1.0 {
                    let tail = piece * ratio / (1.0 - ratio);
                    if tail < tol {
                        return total + tail;
                    }
                }
            } else if piece == 0.0 {
                return total;
            }
        }
        prev = Some(piece);
        hi = lo;
    }
    total
}

/// Inputs that the paper leaves as external constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    /// Constant of the system's concentration inequality.
    pub c_sys: f64,
    /// Lipschitz constant of the observation map.
    pub l_obs: f64,
    /// Entropy constant of the unit ball of `C^{k-1,alpha}` in `C^1` (taken as given).
    pub gamma_hat: f64,
    /// `C^1`-diameter of the discriminator family; `None` uses `max(1 - 2B, 2 C1)`.
    pub delta_c1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    pub entropy_exponent: f64,
    pub rho_scale: f64,
    pub delta: f64,
    pub gamma1_hat: f64,
    pub gamma2_hat: f64,
    pub gamma3_hat: f64,
    /// `tau` must exceed `1 / sqrt(gamma3_hat)` for the data-side rate.
    pub tau_threshold_mu: f64,
    /// `tau` must exceed `sqrt(2) |log B|` for the noise-side rate.
    pub tau_threshold_lambda: f64,
}

pub fn rate_constants(model: &ModelConfig, inputs: &RateInputs) -> Result<RateConstants> {
    model.validate()?;
    model.require_high_regularity()?;
    let RateInputs { c_sys, l_obs, gamma_hat, delta_c1 } = *inputs;
    if !(c_sys > 0.0 && l_obs > 0.0 && gamma_hat >= 0.0) {
        return Err(Error::input("C and L must be positive and gamma nonnegative"));
    }
    let (b, c1, c2, d) = (model.b, model.c1, model.c2, model.d as f64);
    let s = model.entropy_exponent();
    let rho_scale = c_sys.sqrt() * l_obs * (c1 / (b * b) + d.sqrt() / b);
    let gamma1_hat = gamma_hat * (2.0 * c2 * rho_scale).powf(s);
    let delta = rho_scale * delta_c1.unwrap_or((1.0 - 2.0 * b).max(2.0 * c1));
    let gamma2_hat = 24.0 * dudley_integral(gamma1_hat, s, delta)?;
    let gamma3_hat = b * b / (2.0 * c_sys * l_obs * l_obs * c1 * c1);
    Ok(RateConstants {
        entropy_exponent: s,
        rho_scale,
        delta,
        gamma1_hat,
        gamma2_hat,
        gamma3_hat,
        tau_threshold_mu: 1.0 / gamma3_hat.sqrt(),
        tau_threshold_lambda: (2.0 * b.ln().powi(2)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn path_counts_match_enumeration() {
        for (len, k, step) in [(1, 2, 2), (3, 1, 1), (4, 2, 2), (5, 3, 2)] {
            let w = 2 * k + 1;
            let mut count = 0u64;
            let total = (w as u64).pow(len as u32);
            for code in 0..total {
                let mut c = code;
                let seq: Vec<i64> = (0..len).map(|_| { let v = (c % w as u64) as i64 - k; c /= w as u64; v }).collect();
                if seq.windows(2).all(|p| (p[1] - p[0]).abs() <= step) {
                    count += 1;
                }
            }
            assert!((log_count_paths(len, k, step) - (count as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn large_epsilon_gives_a_single_member() {
        let net = build_sup_net(HolderBall::lipschitz(1, 1.0), 2.0).unwrap();
        assert_eq!(net.size(), 1.0);
        let c1 = build_c1_net(HolderBall { d: 1, k: 1, alpha: 1.0, radius: 1.0 }, 2.0).unwrap();
        assert_eq!(c1.log_size(), 0.0);
        let r = verify_sup_net(HolderBall::lipschitz(1, 1.0), 2.0, 200, None, 1).unwrap();
        assert_eq!(r.verified_fraction, 1.0);
    }

    #[test]
    fn lipschitz_nets_cover_probes() {
        for d in [1, 2] {
            let r = verify_sup_net(HolderBall::lipschitz(d, 1.0), 0.25, 1000, None, 2).unwrap();
            assert_eq!(r.verified_fraction, 1.0, "d = {d}, worst {}", r.worst_distance);
            assert!(r.worst_distance > 0.05);
        }
    }

    #[test]
    fn c1_net_covers_probes() {
        let ball = HolderBall { d: 1, k: 1, alpha: 1.0, radius: 1.0 };
        let r = verify_c1_net(ball, 0.25, 500, 3).unwrap();
        assert_eq!(r.verified_fraction, 1.0, "worst {}", r.worst_distance);
        let net = build_c1_net(ball, 0.25).unwrap();
        assert_eq!(net.constants.len(), 16);
        // the paper's 4 / eps holds here; in general the count is ceil(4 r / eps)
        assert!(net.constants.len() as f64 <= 4.0 / 0.25);
        let odd = build_c1_net(ball, 0.3).unwrap();
        assert_eq!(odd.constants.len(), 14);
        assert!(odd.constants.len() as f64 > 4.0 / 0.3);
    }

    #[test]
    fn wrong_member_is_detected() {
        let net = build_sup_net(HolderBall::lipschitz(1, 1.0), 0.25).unwrap();
        let mut levels = vec![0; net.cells()];
        assert!(net.contains(&levels));
        levels[1] = 3;
        assert!(!net.contains(&levels));
        levels[1] = 5;
        assert!(!net.contains(&levels));
    }

    #[test]
    fn growth_exponent_is_near_one() {
        let reports: Vec<CoveringReport> = [0.5, 0.25, 0.125, 0.0625]
            .iter()
            .map(|&e| verify_sup_net(HolderBall::lipschitz(1, 1.0), e, 50, None, 4).unwrap())
            .collect();
        let (s, gamma) = fit_entropy_exponent(&reports).unwrap();
        assert!((0.8..=1.2).contains(&s), "exponent {s}");
        for r in &reports {
            assert!(r.log_net_size <= gamma * r.epsilon.powf(-s) * (1.0 + 1e-12));
        }
        assert!(reports.windows(2).all(|w| w[0].log_net_size <= w[1].log_net_size));
    }

    #[test]
    fn exact_covers_and_the_subset_inequality() {
        let space = FiniteMetric::new(vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]).unwrap();
        assert_eq!(space.covering_number(&[0, 1, 2], 1.0), 1);
        assert_eq!(space.covering_number(&[0, 1, 2], 0.5), 3);
        assert_eq!(space.covering_number(&[0, 2], 1.0), 2);
        assert_eq!(space.covering_number(&[1], 0.1), 1);
        let rep = covering_subset_inequality_check(30, 12, 5).unwrap();
        assert!(rep.holds(), "{rep:?}");
        assert!(rep.cases > 1000);
        assert!(FiniteMetric::new(vec![vec![0.0, 5.0, 1.0], vec![5.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn dudley_examples() {
        assert!((dudley_integral(1.0, 1.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(dudley_integral(1.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(dudley_integral(0.0, 1.0, 3.0).unwrap(), 0.0);
        assert!(matches!(dudley_integral(1.0, 2.0, 1.0), Err(Error::DivergentIntegral(_))));
        let q = dudley_quadrature(&|e: f64| 1.0 / e, 1.0, 1e-12);
        assert!((q - 2.0).abs() < 1e-8, "{q}");
    }

    #[test]
    fn rate_constant_examples() {
        let mut model = ModelConfig::for_dim(1);
        model.b = 0.1;
        model.c1 = 1.0;
        let inputs = RateInputs { c_sys: 1.0, l_obs: 1.0, gamma_hat: 1.0, delta_c1: Some(1.0) };
        let rc = rate_constants(&model, &inputs).unwrap();
        assert!((rc.gamma3_hat - 0.005).abs() < 1e-15);
        assert!((rc.tau_threshold_lambda - 2f64.sqrt() * 10f64.ln()).abs() < 1e-14);
        assert!((rc.tau_threshold_lambda - 3.2565).abs() < 5e-4);
        assert!((rc.tau_threshold_mu - 1.0 / 0.005f64.sqrt()).abs() < 1e-12);
        let four = rate_constants(&model, &RateInputs { gamma_hat: 4.0, ..inputs }).unwrap();
        assert!((four.gamma2_hat / rc.gamma2_hat - 2.0).abs() < 1e-12);
        let mut low = ModelConfig::for_dim(2);
        low.k = 2;
        assert!(matches!(rate_constants(&low, &inputs), Err(Error::Regularity { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn dudley_closed_form_matches_quadrature(gamma in 0.0f64..10.0, s in 0.0f64..1.8, delta in 0.01f64..10.0) {
            let exact = dudley_integral(gamma, s, delta).unwrap();
            let q = dudley_quadrature(&|e: f64| gamma * e.powf(-s), delta, 1e-12);
            prop_assert!((exact - q).abs() < 1e-8, "{} vs {}", exact, q);
        }

        #[test]
        fn net_sizes_shrink_with_epsilon(e in 0.05f64..1.5, f in 1.0f64..3.0) {
            let ball = HolderBall::lipschitz(1, 1.0);
            let a = build_sup_net(ball, e).unwrap();
            let b = build_sup_net(ball, e * f).unwrap();
            prop_assert!(b.log_size() <= a.log_size() + 1e-12);
        }
    }
}
