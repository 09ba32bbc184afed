//! Experiment orchestration: configuration, the rate experiment, the check suites behind the
//! command line, and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concentration::{
    birkhoff_variance_scaling, empirical_tail_check, fit_system_constant, mcdiarmid_bound, DataSource, Metric,
    SeparatelyLipschitzObservable,
};
use crate::dynamics::{sample_trajectory, System, TorusAutomorphism, Trajectory};
use crate::entropy::{
    covering_subset_inequality_check, dudley_integral, dudley_quadrature, fit_entropy_exponent, rate_constants,
    verify_c1_net, verify_sup_net, CoveringReport, HolderBall, RateInputs,
};
use crate::error::{Error, Result};
use crate::hypothesis::{generator_density, GeneratorShape, ModelConfig};
use crate::measures::{jsd, GridDensity};
use crate::numerics::{fit_line, median, seeded_rng};
use crate::observable::{observe, pushforward_density_fn, ObservableConfig};
use crate::risk::{
    decomposition_audit, generalization_error_lambda, generalization_error_mu, measure_model_errors, noise_samples,
    progress_csv, train_gal, GenErrorConfig, ModelErrorConfig, TrainConfig,
};
use crate::tower::{run_tower_checks, verdicts_csv, DoublingMap, TowerCheckConfig, TowerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Orbit of the doubling map (d = 1).
    Doubling,
    /// Orbit of the cat map (d = 2).
    CatMap,
    /// Independent uniform points on the torus of the experiment's dimension.
    Iid,
}

impl SourceKind {
    pub fn label(&self) -> &'static str {
        match self {
            SourceKind::Doubling => "doubling",
            SourceKind::CatMap => "cat-map",
            SourceKind::Iid => "iid",
        }
    }

    pub fn system(&self) -> Option<System> {
        match self {
            SourceKind::Doubling => Some(System::Doubling),
            SourceKind::CatMap => Some(System::Automorphism(TorusAutomorphism::cat_map())),
            SourceKind::Iid => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub source: SourceKind,
    /// Source of the comparison run; `None` skips it.
    pub baseline: Option<SourceKind>,
    pub dim: usize,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Break point parameter of the tent observable.
    pub eps: f64,
    /// Apply the default warp after the tent map (non-uniform target).
    pub warp: bool,
    /// Grid cells per axis for densities; 0 picks 1024 (d = 1) or 64 (d = 2).
    pub resolution: usize,
    pub generalization: bool,
    /// Replace training by the exact values `n^{-1/2}` (harness self-test).
    pub oracle: bool,
    /// Sample size of the single `train` run.
    pub train_n: usize,
    pub slope_range: [f64; 2],
    pub gen_slope_range: [f64; 2],
    pub baseline_slope_tolerance: f64,
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection {
            source: SourceKind::Doubling,
            baseline: Some(SourceKind::Iid),
            dim: 1,
            n_grid: (8..=16).map(|e| 1usize << e).collect(),
            seeds: (0..5).collect(),
            eps: 0.25,
            warp: true,
            resolution: 0,
            generalization: true,
            oracle: false,
            train_n: 1 << 14,
            slope_range: [-0.7, -0.3],
            gen_slope_range: [-0.65, -0.35],
            baseline_slope_tolerance: 0.15,
        }
    }
}

impl RateSection {
    pub fn resolution(&self) -> usize {
        match (self.resolution, self.dim) {
            (0, 1) => 1024,
            (0, _) => 64,
            (r, _) => r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.len() < 2 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] < 2 {
            return Err(Error::config("n_grid needs at least two strictly increasing sizes >= 2"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if !(1..=2).contains(&self.dim) {
            return Err(Error::config("rate experiments run in d = 1 or d = 2"));
        }
        for s in std::iter::once(self.source).chain(self.baseline) {
            if let Some(sys) = s.system() {
                if sys.dim() != self.dim {
                    return Err(Error::config(format!("source {} has dimension {}, experiment has {}", s.label(), sys.dim(), self.dim)));
                }
            }
        }
        if self.slope_range[0] > self.slope_range[1] || self.gen_slope_range[0] > self.gen_slope_range[1] {
            return Err(Error::config("slope ranges must be ordered"));
        }
        Ok(())
    }

    pub fn observable(&self) -> Result<ObservableConfig> {
        let warp = if self.warp { Some(ObservableConfig::default_warp(self.dim)?) } else { None };
        ObservableConfig::new(self.eps, self.dim, warp)
    }

    /// Density of the data measure: Lebesgue measure (invariant for both systems) pushed through `g`.
    pub fn target(&self) -> Result<GridDensity> {
        let obs = self.observable()?;
        pushforward_density_fn(&obs, &|_: &[f64]| 1.0, vec![self.resolution(); self.dim])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimSystem {
    Doubling,
    CatMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub system: SimSystem,
    pub n: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { system: SimSystem::CatMap, n: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TowerSection {
    pub max_cell: u32,
    pub semiconjugacy_states: usize,
    pub invariance_samples: usize,
    pub bins: usize,
}

impl Default for TowerSection {
    fn default() -> Self {
        TowerSection { max_cell: 64, semiconjugacy_states: 10_000, invariance_samples: 1_000_000, bins: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationSection {
    pub tail_n: usize,
    pub tail_replicas: usize,
    pub birkhoff_grid: Vec<usize>,
    pub birkhoff_replicas: usize,
    pub birkhoff_slope_range: [f64; 2],
    pub constant_grid: Vec<usize>,
    pub constant_replicas: usize,
    /// Allowed relative spread of the fitted constant around its mean.
    pub constant_tolerance: f64,
    pub min_exceedances: usize,
}

impl Default for ConcentrationSection {
    fn default() -> Self {
        ConcentrationSection {
            tail_n: 100,
            tail_replicas: 10_000,
            birkhoff_grid: (6..=14).map(|e| 1usize << e).collect(),
            birkhoff_replicas: 2000,
            birkhoff_slope_range: [-1.2, -0.8],
            constant_grid: vec![256, 1024, 4096],
            constant_replicas: 4000,
            constant_tolerance: 0.2,
            min_exceedances: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySection {
    pub sup_probes: usize,
    pub c1_probes: usize,
    pub epsilons: Vec<f64>,
    pub exponent_range: [f64; 2],
    pub spaces: usize,
    pub max_points: usize,
    pub dudley_cases: usize,
    pub dudley_tolerance: f64,
    /// Entropy constant fed to the rate constants.
    pub gamma_hat: f64,
    pub c_sys: f64,
}

impl Default for EntropySection {
    fn default() -> Self {
        EntropySection {
            sup_probes: 1000,
            c1_probes: 500,
            epsilons: vec![0.5, 0.25, 0.125, 0.0625],
            exponent_range: [0.8, 1.2],
            spaces: 30,
            max_points: 12,
            dudley_cases: 50,
            dudley_tolerance: 1e-8,
            gamma_hat: 1.0,
            c_sys: 1.0,
        }
    }
}

/// Whole-program configuration; each section configures one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Base seed; every random stream is derived from it.
    pub seed: u64,
    pub experiment: RateSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen_error: GenErrorConfig,
    pub simulate: SimulateSection,
    pub tower: TowerSection,
    pub concentration: ConcentrationSection,
    pub entropy: EntropySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            experiment: RateSection::default(),
            model: ModelConfig::for_dim(1),
            train: TrainConfig::default(),
            gen_error: GenErrorConfig::default(),
            simulate: SimulateSection::default(),
            tower: TowerSection::default(),
            concentration: ConcentrationSection::default(),
            entropy: EntropySection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            Error::Parse { line, msg: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.d != self.experiment.dim {
            return Err(Error::config("model.d differs from experiment.dim"));
        }
        Ok(())
    }
}

/// One `(n, seed)` cell of a rate experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub seed: u64,
    pub jsd: f64,
    pub eps_gen_mu: f64,
    pub eps_gen_lambda: f64,
    pub converged: bool,
    /// Set when the cell failed; the numeric fields are then NaN.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub source: SourceKind,
    pub rows: Vec<RateRow>,
    /// `(n, median jsd, median eps_gen_mu, median eps_gen_lambda)` over successful cells.
    pub medians: Vec<(usize, f64, f64, f64)>,
    pub fitted_slope: f64,
    pub slope_mu: Option<f64>,
    pub slope_lambda: Option<f64>,
    /// Smallest `tau` with `jsd <= tau sqrt(log n / n)` for every cell with `n > n_grid[0]`.
    pub fitted_tau: f64,
    /// The same envelope fitted on converged cells only.
    pub fitted_tau_converged: f64,
    /// Smallest grid size from which the envelope holds for every larger size.
    pub envelope_from: usize,
    pub slope_pass: bool,
    pub tau_pass: bool,
    pub gen_pass: bool,
}

/// Least-squares slope of `log value` against `log n`.
pub fn fit_loglog_slope(points: &[(usize, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::input("slope fitting needs at least two points"));
    }
    if points.iter().any(|p| !(p.1 > 0.0) || p.0 == 0) {
        return Err(Error::input("log-log fitting needs positive sizes and values"));
    }
    let x: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(fit_line(&x, &y)?.slope)
}

pub fn envelope_rate(n: usize) -> f64 {
    ((n as f64).ln() / n as f64).sqrt()
}

fn envelope_tau(rows: &[&RateRow], n0: usize) -> f64 {
    let beyond: Vec<&&RateRow> = rows.iter().filter(|r| r.n > n0).collect();
    let mut tau = beyond.iter().map(|r| r.jsd / envelope_rate(r.n)).fold(0.0, f64::max);
    // the quotient can round down; step up until the product dominates
    while tau.is_finite() && beyond.iter().any(|r| r.jsd > tau * envelope_rate(r.n)) {
        tau = tau.next_up();
    }
    tau
}

fn source_points(section: &RateSection, source: SourceKind, n: usize, seed: u64) -> Result<Vec<f64>> {
    let obs = section.observable()?;
    let raw = match source.system() {
        Some(sys) => sample_trajectory(&sys, n, seed)?,
        None => {
            let pts = DataSource::IidUniform { dim: section.dim }.sample(n, seed, 0)?;
            Trajectory::from_states(section.dim, pts, "iid".into(), Some(seed))?
        }
    };
    observe(&obs, &raw)
}

/// One cell; `label` is the configured seed and `seed` the derived stream seed.
fn run_cell(cfg: &ExperimentConfig, f_mu: &GridDensity, y: &[f64], z: &[f64], n: usize, label: u64, seed: u64) -> Result<RateRow> {
    let sec = &cfg.experiment;
    if sec.oracle {
        let v = 1.0 / (n as f64).sqrt();
        return Ok(RateRow { n, seed: label, jsd: v, eps_gen_mu: v, eps_gen_lambda: v, converged: true, failure: None });
    }
    let d = sec.dim;
    let shape = GeneratorShape::default_for(d);
    let (y, z) = (&y[..n * d], &z[..n * d]);
    let trained = train_gal(y, z, shape, &cfg.model, &cfg.train, seed ^ 0x7472_6169)?;
    let f_phi = generator_density(&trained.generator, f_mu.resolution())?;
    let value = jsd(f_mu, &f_phi)?;
    let (mu, lambda) = if sec.generalization {
        let gcfg = GenErrorConfig { seed: seed ^ n as u64, ..cfg.gen_error.clone() };
        (generalization_error_mu(y, f_mu, &cfg.model, &gcfg)?.value, generalization_error_lambda(z, shape, &cfg.model, &gcfg)?.value)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RateRow { n, seed: label, jsd: value, eps_gen_mu: mu, eps_gen_lambda: lambda, converged: trained.converged, failure: None })
}

/// Train on prefixes of one data path per seed for every grid size and measure the divergence
/// to the target and both generalization errors. Failed cells are flagged, not fatal.
pub fn run_rate_experiment(cfg: &ExperimentConfig, source: SourceKind) -> Result<RateReport> {
    cfg.validate()?;
    let sec = &cfg.experiment;
    if let Some(sys) = source.system() {
        if sys.dim() != sec.dim {
            return Err(Error::config("source dimension differs from the experiment dimension"));
        }
    }
    let f_mu = sec.target()?;
    let n_max = *sec.n_grid.last().unwrap();
    let paths: Vec<(u64, Vec<f64>, Vec<f64>)> = sec
        .seeds
        .par_iter()
        .map(|&s| {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(s);
            let y = if sec.oracle { Vec::new() } else { source_points(sec, source, n_max, seed)? };
            let z = if sec.oracle { Vec::new() } else { noise_samples(sec.dim, n_max, seed) };
            Ok((s, y, z))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..sec.n_grid.len()).flat_map(|i| (0..paths.len()).map(move |j| (i, j))).collect();
    let rows: Vec<RateRow> = cells
        .par_iter()
        .map(|&(i, j)| {
            let n = sec.n_grid[i];
            let (s, y, z) = &paths[j];
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(*s);
            run_cell(cfg, &f_mu, y, z, n, *s, seed).unwrap_or_else(|e| RateRow {
                n,
                seed: *s,
                jsd: f64::NAN,
                eps_gen_mu: f64::NAN,
                eps_gen_lambda: f64::NAN,
                converged: false,
                failure: Some(e.to_string()),
            })
        })
        .collect();
    summarize(sec, source, rows)
}

fn summarize(sec: &RateSection, source: SourceKind, rows: Vec<RateRow>) -> Result<RateReport> {
    let ok: Vec<&RateRow> = rows.iter().filter(|r| r.failure.is_none()).collect();
    let medians: Vec<(usize, f64, f64, f64)> = sec
        .n_grid
        .iter()
        .filter_map(|&n| {
            let at: Vec<&&RateRow> = ok.iter().filter(|r| r.n == n).collect();
            let m = |f: &dyn Fn(&RateRow) -> f64| median(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some((n, m(&|r| r.jsd)?, m(&|r| r.eps_gen_mu)?, m(&|r| r.eps_gen_lambda)?))
        })
        .collect();
    let fitted_slope = fit_loglog_slope(&medians.iter().map(|m| (m.0, m.1)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let gen_slope = |k: usize| -> Option<f64> {
        let pts: Vec<(usize, f64)> = medians.iter().map(|m| (m.0, if k == 0 { m.2 } else { m.3 })).collect();
        if pts.iter().any(|p| p.1.is_nan()) {
            None
        } else {
            fit_loglog_slope(&pts).ok()
        }
    };
    let (slope_mu, slope_lambda) = (gen_slope(0), gen_slope(1));
    let n0 = sec.n_grid[0];
    let fitted_tau = envelope_tau(&ok, n0);
    let converged: Vec<&RateRow> = ok.iter().copied().filter(|r| r.converged).collect();
    let fitted_tau_converged = envelope_tau(&converged, n0);
    let envelope_from = sec
        .n_grid
        .iter()
        .copied()
        .find(|&m| ok.iter().filter(|r| r.n >= m).all(|r| r.jsd <= fitted_tau * envelope_rate(r.n)))
        .unwrap_or(n0);
    let inside = |s: f64, r: [f64; 2]| s >= r[0] && s <= r[1];
    let all_ok = ok.len() == rows.len();
    Ok(RateReport {
        source,
        medians,
        fitted_slope,
        slope_mu,
        slope_lambda,
        fitted_tau,
        fitted_tau_converged,
        envelope_from,
        slope_pass: all_ok && inside(fitted_slope, sec.slope_range),
        tau_pass: all_ok && fitted_tau.is_finite(),
        gen_pass: all_ok
            && slope_mu.is_some_and(|s| inside(s, sec.gen_slope_range))
            && slope_lambda.is_some_and(|s| inside(s, sec.gen_slope_range)),
        rows,
    })
}

impl RateReport {
    pub fn rates_csv(&self) -> String {
        let mut out = String::from("n,seed,jsd,eps_gen_mu,eps_gen_lambda\n");
        for r in self.rows.iter().filter(|r| r.failure.is_none()) {
            let _ = writeln!(out, "{},{},{:.12e},{:.12e},{:.12e}", r.n, r.seed, r.jsd, r.eps_gen_mu, r.eps_gen_lambda);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|s| format!("{s:.9}")).unwrap_or_default();
        let failed: Vec<String> = self.rows.iter().filter(|r| r.failure.is_some()).map(|r| format!("{}:{}", r.n, r.seed)).collect();
        let nonconverged = self.rows.iter().filter(|r| r.failure.is_none() && !r.converged).count();
        let mut out = String::from("key,value\n");
        let _ = writeln!(out, "source,{}", self.source.label());
        let _ = writeln!(out, "fitted_slope,{:.9}", self.fitted_slope);
        let _ = writeln!(out, "slope_eps_gen_mu,{}", opt(self.slope_mu));
        let _ = writeln!(out, "slope_eps_gen_lambda,{}", opt(self.slope_lambda));
        let _ = writeln!(out, "fitted_tau,{:.9}", self.fitted_tau);
        let _ = writeln!(out, "fitted_tau_converged,{:.9}", self.fitted_tau_converged);
        let _ = writeln!(out, "envelope_from,{}", self.envelope_from);
        let _ = writeln!(out, "nonconverged_cells,{nonconverged}");
        let _ = writeln!(out, "failed_cells,{}", failed.join(" "));
        let _ = writeln!(out, "slope_pass,{}", self.slope_pass);
        let _ = writeln!(out, "tau_pass,{}", self.tau_pass);
        let _ = writeln!(out, "gen_pass,{}", self.gen_pass);
        out.push_str("\nn,median_jsd,median_eps_gen_mu,median_eps_gen_lambda\n");
        for m in &self.medians {
            let _ = writeln!(out, "{},{:.12e},{:.12e},{:.12e}", m.0, m.1, m.2, m.3);
        }
        out
    }

    /// Log-log plot of every cell, the medians and the fitted envelope; `None` without data.
    pub fn svg(&self) -> Option<String> {
        let pts: Vec<(f64, f64)> =
            self.rows.iter().filter(|r| r.failure.is_none() && r.jsd > 0.0).map(|r| ((r.n as f64).log10(), r.jsd.log10())).collect();
        if pts.is_empty() {
            return None;
        }
        let ns: Vec<f64> = self.rows.iter().map(|r| r.n as f64).collect();
        let (nlo, nhi) = (ns.iter().cloned().fold(f64::MAX, f64::min), ns.iter().cloned().fold(0.0, f64::max));
        let env: Vec<(f64, f64)> = (0..=64)
            .map(|i| nlo * (nhi / nlo).powf(i as f64 / 64.0))
            .filter(|n| *n > 1.0)
            .map(|n| (n.log10(), (self.fitted_tau * envelope_rate(n as usize).max(1e-300)).log10()))
            .collect();
        let all = pts.iter().chain(&env);
        let (x0, x1) = (nlo.log10(), nhi.log10().max(nlo.log10() + 1e-9));
        let y0 = all.clone().map(|p| p.1).fold(f64::MAX, f64::min).floor();
        let y1 = all.map(|p| p.1).fold(f64::MIN, f64::max).ceil().max(y0 + 1.0);
        let (w, h, m) = (640.0, 420.0, 50.0);
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let poly = |p: &[(f64, f64)]| p.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect::<Vec<_>>().join(" ");
        let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
        let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"black\" points=\"{},{} {},{} {},{}\"/>", m, m, m, h - m, w - m, h - m);
        for e in (y0 as i64)..=(y1 as i64) {
            let _ = writeln!(s, "<text x=\"4\" y=\"{:.2}\" font-size=\"11\">1e{e}</text>", sy(e as f64) + 4.0);
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\">log10 n from {:.2} to {:.2}</text>", w / 2.0 - 80.0, h - 12.0, x0, x1);
        for (x, y) in &pts {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"steelblue\"/>", sx(*x), sy(*y));
        }
        let med: Vec<(f64, f64)> = self.medians.iter().filter(|m| m.1 > 0.0).map(|m| ((m.0 as f64).log10(), m.1.log10())).collect();
        let _ = writeln!(s, "<polyline class=\"median\" fill=\"none\" stroke=\"steelblue\" points=\"{}\"/>", poly(&med));
        let _ = writeln!(s, "<polyline class=\"envelope\" fill=\"none\" stroke=\"firebrick\" stroke-dasharray=\"4 3\" points=\"{}\"/>", poly(&env));
        let _ = writeln!(s, "<text x=\"{}\" y=\"20\" font-size=\"12\">jsd ({}), envelope tau = {:.4}</text>", m, self.source.label(), self.fitted_tau);
        s.push_str("</svg>\n");
        Some(s)
    }
}

/// Write a file, creating its directory.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `rates.csv`, `summary.csv` and, when there is data, `rates.svg` in `dir`.
pub fn emit_reports(report: &RateReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = vec![dir.join("rates.csv"), dir.join("summary.csv")];
    write_file(&written[0], &report.rates_csv())?;
    write_file(&written[1], &report.summary_csv())?;
    if let Some(svg) = report.svg() {
        let p = dir.join("rates.svg");
        write_file(&p, &svg)?;
        written.push(p);
    }
    Ok(written)
}

/// A named pass/fail check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, target: impl Into<String>, pass: bool) -> Self {
        Check { name: name.into(), value, target: target.into(), pass }
    }
}

/// Checks plus report files (name, contents) of one command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
    pub files: Vec<(String, String)>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn checks_csv(&self) -> String {
        let mut out = String::from("check,value,target,pass\n");
        for c in &self.checks {
            let _ = writeln!(out, "{},{:.9e},{},{}", c.name, c.value, c.target, c.pass);
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("checks.csv"), &self.checks_csv())?;
        for (name, body) in &self.files {
            write_file(&dir.join(name), body)?;
        }
        Ok(())
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Trajectory> {
    let sys = match cfg.simulate.system {
        SimSystem::Doubling => System::Doubling,
        SimSystem::CatMap => System::Automorphism(TorusAutomorphism::cat_map()),
    };
    sample_trajectory(&sys, cfg.simulate.n, cfg.seed)
}

pub fn tower_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    let t = &cfg.tower;
    let spec = TowerSpec::doubling(t.max_cell);
    let tcfg = TowerCheckConfig {
        semiconjugacy_states: t.semiconjugacy_states,
        invariance_samples: t.invariance_samples,
        bins: t.bins,
        tail_fit_max: None,
        seed: cfg.seed,
    };
    let verdicts = run_tower_checks(&spec, &DoublingMap, &tcfg)?;
    let checks = verdicts.iter().map(|v| Check::new(&v.check, v.value, format!("{:e}", v.threshold), v.pass)).collect();
    Ok(SuiteReport { checks, files: vec![("tower_verdicts.csv".into(), verdicts_csv(&verdicts)), ("tower_spec.txt".into(), spec.to_text())] })
}

/// One training run at `experiment.train_n` with the full error decomposition.
pub fn train_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let sec = &cfg.experiment;
    let n = sec.train_n;
    let f_mu = sec.target()?;
    let y = source_points(sec, sec.source, n, cfg.seed)?;
    let z = noise_samples(sec.dim, n, cfg.seed);
    let shape = GeneratorShape::default_for(sec.dim);
    let trained = train_gal(&y, &z, shape, &cfg.model, &cfg.train, cfg.seed)?;
    let gcfg = GenErrorConfig { seed: cfg.seed, ..cfg.gen_error.clone() };
    let mu = generalization_error_mu(&y, &f_mu, &cfg.model, &gcfg)?;
    let lambda = generalization_error_lambda(&z, shape, &cfg.model, &gcfg)?;
    let mcfg = ModelErrorConfig { seed: cfg.seed, ..ModelErrorConfig::default() };
    let errors = measure_model_errors(&f_mu, shape, &cfg.model, &mcfg, &[("trained", &trained.generator)])?;
    let audit = decomposition_audit(&f_mu, &trained.generator, mu.value, lambda.value, &errors)?;
    let mut summary = String::from("key,value\n");
    for (k, v) in [
        ("n", n as f64),
        ("objective", trained.objective),
        ("jsd", audit.jsd_achieved),
        ("eps_model_g", audit.eps_model_g),
        ("eps_model_d", audit.eps_model_d),
        ("eps_gen_mu", audit.eps_gen_mu),
        ("eps_gen_lambda", audit.eps_gen_lambda),
        ("bound_plus_tolerance", audit.bound() + audit.tolerance),
        ("slack", audit.slack),
    ] {
        let _ = writeln!(summary, "{k},{v:.12e}");
    }
    let _ = writeln!(summary, "converged,{}", trained.converged);
    Ok(SuiteReport {
        checks: vec![
            Check::new("decomposition_audit", audit.slack, "slack >= 0", audit.holds),
            Check::new("training_converged", trained.objective, "converged", trained.converged),
        ],
        files: vec![
            ("train_summary.csv".into(), summary),
            ("train_progress.csv".into(), progress_csv(&trained.progress)),
            ("generator.txt".into(), trained.generator.to_text()),
        ],
    })
}

/// Rate experiment plus the optional baseline comparison.
pub fn rates_suite(cfg: &ExperimentConfig) -> Result<(SuiteReport, RateReport, Option<RateReport>)> {
    let sec = &cfg.experiment;
    let main = run_rate_experiment(cfg, sec.source)?;
    let baseline = sec.baseline.map(|b| run_rate_experiment(cfg, b)).transpose()?;
    let range = |r: [f64; 2]| format!("[{}, {}]", r[0], r[1]);
    let mut checks = vec![
        Check::new("jsd_slope", main.fitted_slope, range(sec.slope_range), main.slope_pass),
        Check::new("envelope_tau", main.fitted_tau, "finite", main.tau_pass),
    ];
    if sec.generalization {
        let inside = |s: Option<f64>| s.is_some_and(|v| v >= sec.gen_slope_range[0] && v <= sec.gen_slope_range[1]);
        checks.push(Check::new("eps_gen_mu_slope", main.slope_mu.unwrap_or(f64::NAN), range(sec.gen_slope_range), inside(main.slope_mu)));
        checks.push(Check::new("eps_gen_lambda_slope", main.slope_lambda.unwrap_or(f64::NAN), range(sec.gen_slope_range), inside(main.slope_lambda)));
    }
    let mut files = vec![
        ("rates.csv".into(), main.rates_csv()),
        ("summary.csv".into(), main.summary_csv()),
    ];
    if let Some(svg) = main.svg() {
        files.push(("rates.svg".into(), svg));
    }
    if let Some(b) = &baseline {
        let gap = (b.fitted_slope - main.fitted_slope).abs();
        checks.push(Check::new("baseline_slope_gap", gap, format!("<= {}", sec.baseline_slope_tolerance), gap <= sec.baseline_slope_tolerance));
        let dir = b.source.label();
        files.push((format!("{dir}/rates.csv"), b.rates_csv()));
        files.push((format!("{dir}/summary.csv"), b.summary_csv()));
    }
    Ok((SuiteReport { checks, files }, main, baseline))
}

pub fn concentration_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    let c = &cfg.concentration;
    let mut checks = Vec::new();
    let mut files = Vec::new();

    // i.i.d. uniform data, bounded-difference observable
    let n = c.tail_n;
    let obs = SeparatelyLipschitzObservable::bounded_mean(n, 1, 1.0, |x| x[0])?;
    let proxy = mcdiarmid_bound(obs.coefficients())?;
    let tails = empirical_tail_check(&obs, &DataSource::IidUniform { dim: 1 }, proxy, c.tail_replicas, &[], Some(0.5), cfg.seed)?;
    let worst = tails.rows.iter().map(|r| r.empirical_tail / r.bound_tail.max(1e-300)).fold(0.0, f64::max);
    checks.push(Check::new("mcdiarmid_tails", worst, "empirical <= bound at every t", tails.holds()));
    files.push(("mcdiarmid_tails.csv".into(), tails.to_csv()));

    // Birkhoff averages of a smooth observable along cat-map orbits
    let cat = DataSource::Trajectory(System::Automorphism(TorusAutomorphism::cat_map()));
    let f = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).cos();
    let scaling = birkhoff_variance_scaling(&cat, &f, &c.birkhoff_grid, c.birkhoff_replicas, cfg.seed.wrapping_add(1))?;
    let r = c.birkhoff_slope_range;
    checks.push(Check::new(
        "birkhoff_variance_slope",
        scaling.slope,
        format!("[{}, {}]", r[0], r[1]),
        !scaling.degenerate && scaling.slope >= r[0] && scaling.slope <= r[1],
    ));
    let mut csv = String::from("n,variance\n");
    for (n, v) in &scaling.rows {
        let _ = writeln!(csv, "{n},{v:.12e}");
    }
    files.push(("birkhoff_variance.csv".into(), csv));

    // the fitted tower constant for the same observable at several lengths
    let mut fitted = Vec::new();
    let mut csv = String::from("n,c_raw,c_normalized,points_used\n");
    for (k, &n) in c.constant_grid.iter().enumerate() {
        let lip = 2.0 * std::f64::consts::PI;
        let obs = SeparatelyLipschitzObservable::birkhoff_mean(n, 2, lip, Metric::Torus, f)?;
        let fc = fit_system_constant(&obs, &cat, c.constant_replicas, lip, c.min_exceedances, cfg.seed.wrapping_add(2 + k as u64))?;
        let _ = writeln!(csv, "{n},{:.9e},{:.9e},{}", fc.c_raw, fc.c_normalized, fc.points_used);
        fitted.push(fc.c_raw);
    }
    files.push(("system_constant.csv".into(), csv));
    let mean = fitted.iter().sum::<f64>() / fitted.len().max(1) as f64;
    let spread = fitted.iter().map(|v| (v / mean - 1.0).abs()).fold(0.0, f64::max);
    checks.push(Check::new("system_constant_spread", spread, format!("<= {}", c.constant_tolerance), fitted.len() >= 2 && spread <= c.constant_tolerance));
    Ok(SuiteReport { checks, files })
}

pub fn entropy_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    let e = &cfg.entropy;
    let mut checks = Vec::new();
    let mut files = Vec::new();

    let mut sup_reports: Vec<CoveringReport> = Vec::new();
    for (k, &eps) in e.epsilons.iter().enumerate() {
        sup_reports.push(verify_sup_net(HolderBall::lipschitz(1, 1.0), eps, e.sup_probes, None, cfg.seed.wrapping_add(k as u64))?);
    }
    let two_d = verify_sup_net(HolderBall::lipschitz(2, 1.0), 0.25, e.sup_probes, None, cfg.seed.wrapping_add(100))?;
    let c1 = verify_c1_net(HolderBall { d: 1, k: 1, alpha: 1.0, radius: 1.0 }, 0.25, e.c1_probes, cfg.seed.wrapping_add(200))?;
    let min_cover = sup_reports.iter().chain([&two_d]).map(|r| r.verified_fraction).fold(1.0, f64::min);
    checks.push(Check::new("sup_net_coverage", min_cover, "1.0", min_cover == 1.0));
    checks.push(Check::new("c1_net_coverage", c1.verified_fraction, "1.0", c1.verified_fraction == 1.0));
    let (s, gamma) = fit_entropy_exponent(&sup_reports)?;
    let r = e.exponent_range;
    checks.push(Check::new("lipschitz_entropy_exponent", s, format!("[{}, {}]", r[0], r[1]), s >= r[0] && s <= r[1]));
    let fitted: Vec<CoveringReport> = sup_reports.iter().map(|c| CoveringReport { log_bound: Some(gamma * c.epsilon.powf(-1.0)), ..c.clone() }).collect();
    let mut net_rows = fitted.clone();
    net_rows.push(two_d);
    net_rows.push(c1);
    files.push(("nets.csv".into(), CoveringReport::csv(&net_rows)));

    let sub = covering_subset_inequality_check(e.spaces, e.max_points, cfg.seed)?;
    checks.push(Check::new("subset_covering_inequality", sub.violations as f64, "0 violations", sub.holds()));

    let mut rng = seeded_rng(cfg.seed, 0x6475_646c);
    let mut worst: f64 = 0.0;
    let mut csv = String::from("gamma,s,delta,closed_form,quadrature\n");
    for _ in 0..e.dudley_cases {
        let (g, s, d) = (10.0 * rng.gen::<f64>(), 1.8 * rng.gen::<f64>(), 0.01 + 9.99 * rng.gen::<f64>());
        let exact = dudley_integral(g, s, d)?;
        let q = dudley_quadrature(&|x: f64| g * x.powf(-s), d, 1e-12);
        worst = worst.max((exact - q).abs());
        let _ = writeln!(csv, "{g:.9e},{s:.9e},{d:.9e},{exact:.15e},{q:.15e}");
    }
    files.push(("dudley.csv".into(), csv));
    checks.push(Check::new("dudley_closed_form_vs_quadrature", worst, format!("< {:e}", e.dudley_tolerance), worst < e.dudley_tolerance));

    let obs = cfg.experiment.observable()?;
    let rc = rate_constants(&cfg.model, &RateInputs { c_sys: e.c_sys, l_obs: obs.lipschitz_constant(), gamma_hat: e.gamma_hat, delta_c1: None })?;
    let mut csv = String::from("key,value\n");
    for (k, v) in [
        ("entropy_exponent", rc.entropy_exponent),
        ("rho_scale", rc.rho_scale),
        ("delta", rc.delta),
        ("gamma1_hat", rc.gamma1_hat),
        ("gamma2_hat", rc.gamma2_hat),
        ("gamma3_hat", rc.gamma3_hat),
        ("tau_threshold_mu", rc.tau_threshold_mu),
        ("tau_threshold_lambda", rc.tau_threshold_lambda),
    ] {
        let _ = writeln!(csv, "{k},{v:.12e}");
    }
    files.push(("rate_constants.csv".into(), csv));
    Ok(SuiteReport { checks, files })
}
