//! Batch experiments: configuration, dispatch, tolerance checks and artifacts.
//!
//! Every run writes `<experiment>.csv`, `<experiment>.json` and `manifest.json` into the
//! output directory. CSV schemas:
//! - constants: name, N, closed_form, quadrature, gap, relative, gated
//! - euclid_check: N, samples, bubble_residual, kernel_residual, energy_gap;
//!   plus `interaction.csv`: N, delta_i, delta_j, distance, q, integral, mc_error, ratio
//! - nondegeneracy: r, smallest_gap, L
//! - coercivity: N, nu, positive_u0, delta, gap, unconstrained
//! - scaling, optimality: delta, gamma, dist, rho_norm, leader_ratio, q, converged

pub mod analytic;
pub mod manifold_runs;
pub mod zeta;

pub use analytic::{run_constants, run_euclid_check, run_interaction_envelope, ConstantsReport, EnvelopeReport, EuclidRow};
pub use manifold_runs::{
    run_coercivity, run_manifold_sanity, run_nondegeneracy, run_optimality, run_scaling, solve_optimality, CoercivityRow,
    NondegeneracyReport, OptimalityPoint, PartialSweep, SanityReport, ScalingRow, ScalingRun, SweepSetup,
};
pub use zeta::{fit_power_law, fit_zeta, LogCorrection, PowerFit, ZetaFit};

use crate::decomposition::U0Mode;
use crate::error::{Error, Result};
use crate::model_manifold::{DiscreteManifold, ManifoldSpec};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Constants,
    EuclidCheck,
    Scaling,
    Optimality,
    Coercivity,
    Nondegeneracy,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Constants => "constants",
            ExperimentKind::EuclidCheck => "euclid_check",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Optimality => "optimality",
            ExperimentKind::Coercivity => "coercivity",
            ExperimentKind::Nondegeneracy => "nondegeneracy",
        }
    }
}

/// Geometric sequence from `max` down to `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaGrid {
    pub max: f64,
    pub min: f64,
    pub count: usize,
}

impl DeltaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.max > self.min && self.min > 0.0) || self.count < 2 {
            return Err(Error::InvalidInput(format!("delta grid must be strictly decreasing and positive: {self:?}")));
        }
        let ratio = self.min / self.max;
        Ok((0..self.count).map(|k| self.max * ratio.powf(k as f64 / (self.count - 1) as f64)).collect())
    }
}

/// Evenly spaced radii for a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl RadiusGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.max > self.min && self.min > 0.0) || self.count < 2 {
            return Err(Error::InvalidInput(format!("bad radius grid {self:?}")));
        }
        Ok((0..self.count).map(|k| self.min + (self.max - self.min) * k as f64 / (self.count - 1) as f64).collect())
    }
}

/// Pass/fail thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub constants: f64,
    pub residual: f64,
    pub energy: f64,
    pub envelope_spread: f64,
    pub gap_max: f64,
    pub unconstrained_min: f64,
    pub exponent: Option<f64>,
    pub exponent_tol: f64,
    pub spread_max: f64,
    pub leader_tol: Option<f64>,
    pub expected_crossings: Vec<f64>,
    pub crossing_window: f64,
    pub crossing_threshold: f64,
    pub deficit_u0: f64,
    pub mu1_tol: f64,
    pub mass_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            constants: 1e-9,
            residual: 1e-10,
            energy: 1e-8,
            envelope_spread: 10.0,
            gap_max: 0.95,
            unconstrained_min: 1.0,
            exponent: None,
            exponent_tol: 0.05,
            spread_max: 10.0,
            leader_tol: None,
            expected_crossings: vec![1.0, 2.0],
            crossing_window: 0.05,
            crossing_threshold: 0.5,
            deficit_u0: 1e-4,
            mu1_tol: 1e-5,
            mass_factor: 3.0,
        }
    }
}

/// A TOML-readable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub manifold: ManifoldSpec,
    /// dimensions for the Euclidean experiments
    #[serde(default)]
    pub dims: Vec<usize>,
    pub delta_grid: DeltaGrid,
    #[serde(default = "one")]
    pub nu: usize,
    /// coercivity sweeps every nu up to this one
    #[serde(default)]
    pub nu_list: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    pub u0: U0Mode,
    #[serde(default)]
    pub radii: Option<RadiusGrid>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_samples() -> usize {
    10_000
}

impl ExperimentConfig {
    /// Desk-scale default configuration of each experiment.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            manifold: ManifoldSpec::product(1.5, 3, 256, 192).graded(vec![0.0], 0.01, 16),
            dims: Vec::new(),
            delta_grid: DeltaGrid { max: 0.1, min: 0.01, count: 8 },
            nu: 1,
            nu_list: Vec::new(),
            seed: 20_240_601,
            u0: U0Mode::PositiveU0,
            radii: None,
            samples: 10_000,
            tolerances: Tolerances::default(),
            output_path: None,
        };
        match kind {
            ExperimentKind::Constants => Self { dims: (3..=10).collect(), ..base },
            ExperimentKind::EuclidCheck => Self { dims: (3..=10).collect(), ..base },
            ExperimentKind::Nondegeneracy => Self {
                manifold: ManifoldSpec::product(1.5, 3, 512, 256),
                radii: Some(RadiusGrid { min: 0.6, max: 2.4, count: 37 }),
                ..base
            },
            ExperimentKind::Coercivity => Self {
                manifold: ManifoldSpec::product(1.5, 3, 384, 192).graded(vec![0.0], 0.003, 8),
                delta_grid: DeltaGrid { max: 0.1, min: 0.01, count: 4 },
                nu_list: vec![1, 2],
                u0: U0Mode::ZeroU0,
                ..base
            },
            ExperimentKind::Scaling => Self {
                tolerances: Tolerances { exponent: Some(0.5), ..Tolerances::default() },
                ..base
            },
            ExperimentKind::Optimality => Self {
                manifold: ManifoldSpec::product(1.25, 6, 384, 192).graded(vec![0.0], 0.001, 12),
                delta_grid: DeltaGrid { max: 0.02, min: 0.001, count: 8 },
                tolerances: Tolerances { exponent: Some(2.0), exponent_tol: 0.1, ..Tolerances::default() },
                ..base
            },
        }
    }

    /// The u0 = 0 sweep: deficit exponent N - 2 and the mass leader of the projection.
    pub fn zero_background_scaling() -> Self {
        Self {
            u0: U0Mode::ZeroU0,
            tolerances: Tolerances { exponent: Some(1.0), exponent_tol: 0.1, leader_tol: Some(0.15), ..Tolerances::default() },
            ..Self::preset(ExperimentKind::Scaling)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn positive(&self) -> bool {
        self.u0 == U0Mode::PositiveU0
    }
}

/// One tolerance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound: format!("<= {bound:e}"), pass: value <= bound }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound: format!(">= {bound:e}"), pass: value >= bound }
    }

    pub fn within(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self { name: name.into(), value, bound: format!("{target} +- {tol}"), pass: (value - target).abs() <= tol }
    }

    pub fn flag(name: &str, pass: bool) -> Self {
        Self { name: name.into(), value: if pass { 1.0 } else { 0.0 }, bound: "true".into(), pass }
    }
}

/// Result of [`run`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Outcome {
    pub experiment: ExperimentKind,
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Serialize)]
struct GridInfo {
    n_t: usize,
    n_theta: usize,
    finest_spacing: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config: &'a ExperimentConfig,
    grid: Option<GridInfo>,
    solver: SolverInfo,
    jobs: usize,
    wall_time_s: f64,
    version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
struct SolverInfo {
    eigen_tol: f64,
    gram_condition_max: f64,
    fit_step_tol: f64,
    newton_tol: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Run one experiment, write its artifacts into `out` and evaluate its tolerances.
pub fn run(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Outcome> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let name = config.experiment.name();
    let csv_path = out.join(format!("{name}.csv"));
    let json_path = out.join(format!("{name}.json"));
    let tol = &config.tolerances;
    let mut artifacts = vec![csv_path.clone(), json_path.clone()];
    let mut grid = None;
    let checks = match config.experiment {
        ExperimentKind::Constants => {
            let golden = if csv_path.exists() { Some(ConstantsReport::read_csv(File::open(&csv_path)?)?) } else { None };
            let rep = run_constants(&config.dims, tol.constants)?;
            let mut checks = vec![Check::at_most("max two-way gap", rep.max_gap(), tol.constants)];
            for (c, n, ok) in &rep.positivity {
                checks.push(Check::flag(&format!("{c}_{n} > 0"), *ok));
            }
            if let Some(g) = golden {
                checks.push(Check::at_most("diff against previous run", rep.diff_against(&g)?, tol.constants));
            }
            rep.write_csv(create(&csv_path)?)?;
            write_json(&json_path, &rep)?;
            checks
        }
        ExperimentKind::EuclidCheck => {
            let rows = run_euclid_check(&config.dims, config.samples, config.seed)?;
            let env_dims: Vec<usize> = config.dims.iter().cloned().filter(|n| (3..=5).contains(n)).collect();
            let env = run_interaction_envelope(&env_dims, 50, 1e-2, 100_000, config.seed)?;
            let mut checks = euclid_checks(&rows, tol);
            checks.extend(envelope_checks(&env, tol));
            analytic::write_rows(create(&csv_path)?, &rows)?;
            let env_path = out.join("interaction.csv");
            analytic::write_rows(create(&env_path)?, &env.rows)?;
            artifacts.push(env_path);
            write_json(&json_path, &(&rows, &env))?;
            checks
        }
        ExperimentKind::Nondegeneracy => {
            let spec = &config.manifold;
            let radii = config.radii.ok_or_else(|| Error::InvalidInput("nondegeneracy needs a radius grid".into()))?.values()?;
            let rep = run_nondegeneracy(spec.dim(), &radii, spec.n_t / 4, spec.n_theta / 4, tol.crossing_threshold)?;
            let radius = spec.radius().ok_or_else(|| Error::InvalidInput("product model required".into()))?;
            let sanity = run_manifold_sanity(radius, spec.dim(), spec.n_t, spec.n_theta)?;
            let mut checks = sanity_checks(&sanity, tol);
            checks.extend(crossing_checks(&rep, tol));
            crate::spectral::write_scan_csv(create(&csv_path)?, &rep.scan)?;
            write_json(&json_path, &(&rep, &sanity))?;
            checks
        }
        ExperimentKind::Coercivity => {
            let deltas = config.delta_grid.values()?;
            let nus = if config.nu_list.is_empty() { vec![config.nu] } else { config.nu_list.clone() };
            let mut rows = Vec::new();
            for &nu in &nus {
                rows.extend(run_coercivity(&config.manifold, nu, config.positive(), &deltas, jobs)?);
            }
            let checks = coercivity_checks(&rows, tol);
            analytic::write_rows(create(&csv_path)?, &rows)?;
            write_json(&json_path, &rows)?;
            grid = Some(grid_info(&config.manifold)?);
            checks
        }
        ExperimentKind::Scaling | ExperimentKind::Optimality => {
            let deltas = config.delta_grid.values()?;
            let result = if config.experiment == ExperimentKind::Scaling {
                run_scaling(&config.manifold, config.nu, config.positive(), &deltas, jobs)
            } else {
                run_optimality(&config.manifold, &deltas, jobs)
            };
            let sweep = match result {
                Ok(s) => s,
                Err(partial) => {
                    analytic::write_rows(create(&csv_path)?, &partial.rows)?;
                    return Err(partial.error);
                }
            };
            sweep.write_csv(create(&csv_path)?)?;
            write_json(&json_path, &sweep)?;
            grid = Some(grid_info(&config.manifold)?);
            sweep_checks(config, &sweep)
        }
    };
    let wall_time_s = start.elapsed().as_secs_f64();
    let manifest = Manifest {
        experiment: name,
        config,
        grid,
        solver: SolverInfo {
            eigen_tol: crate::spectral::EIG_TOL,
            gram_condition_max: crate::spectral::MAX_GRAM_CONDITION,
            fit_step_tol: crate::decomposition::FitOptions::default().step_tol,
            newton_tol: 1e-9,
        },
        jobs,
        wall_time_s,
        version: env!("CARGO_PKG_VERSION"),
    };
    let manifest_path = out.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    artifacts.push(manifest_path);
    Ok(Outcome { experiment: config.experiment, checks, artifacts, wall_time_s })
}

fn grid_info(spec: &ManifoldSpec) -> Result<GridInfo> {
    let m = DiscreteManifold::build(spec.clone())?;
    Ok(GridInfo { n_t: m.n_t(), n_theta: m.n_theta(), finest_spacing: manifold_runs::finest_spacing(&m) })
}

pub fn euclid_checks(rows: &[EuclidRow], tol: &Tolerances) -> Vec<Check> {
    let worst = |f: fn(&EuclidRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    vec![
        Check::at_most("bubble equation residual", worst(|r| r.bubble_residual), tol.residual),
        Check::at_most("linearized equation residual", worst(|r| r.kernel_residual), tol.residual),
        Check::at_most("energy identity gap", worst(|r| r.energy_gap), tol.energy),
    ]
}

pub fn envelope_checks(env: &EnvelopeReport, tol: &Tolerances) -> Vec<Check> {
    env.spread
        .iter()
        .map(|(n, s)| Check::at_most(&format!("interaction envelope spread N={n}"), *s, tol.envelope_spread))
        .collect()
}

pub fn sanity_checks(sanity: &SanityReport, tol: &Tolerances) -> Vec<Check> {
    vec![
        Check::at_most("Gamma(u0)", sanity.gamma_u0, tol.deficit_u0),
        Check::at_most("Gamma(u0) on the doubled grid", sanity.gamma_u0_fine, (0.5 * sanity.gamma_u0).max(1e-10)),
        Check::within("first weighted eigenvalue", sanity.mu1, 1.0, tol.mu1_tol),
        Check::at_least("Green mass", sanity.mass, f64::MIN_POSITIVE),
        Check::at_most("mass change under doubling", (sanity.mass - sanity.mass_fine).abs(), tol.mass_factor * sanity.mass_error),
    ]
}

pub fn crossing_checks(rep: &NondegeneracyReport, tol: &Tolerances) -> Vec<Check> {
    let mut checks = Vec::new();
    for &r in &tol.expected_crossings {
        let near = |list: &[f64]| list.iter().map(|c| (c - r).abs()).fold(f64::MAX, f64::min);
        checks.push(Check::at_most(&format!("crossing near r={r}"), near(&rep.crossings), tol.crossing_window));
        checks.push(Check::at_most(&format!("oracle crossing near r={r}"), near(&rep.oracle_crossings), tol.crossing_window));
    }
    checks
}

pub fn coercivity_checks(rows: &[CoercivityRow], tol: &Tolerances) -> Vec<Check> {
    vec![
        Check::at_most("largest constrained gap", rows.iter().map(|r| r.gap).fold(0.0, f64::max), tol.gap_max - 1e-12),
        Check::at_least(
            "smallest unconstrained value",
            rows.iter().map(|r| r.unconstrained).fold(f64::MAX, f64::min),
            tol.unconstrained_min,
        ),
    ]
}

/// Tolerance checks of a delta sweep.
pub fn sweep_checks(config: &ExperimentConfig, sweep: &ScalingRun) -> Vec<Check> {
    let tol = &config.tolerances;
    let mut checks = Vec::new();
    if let Some(e) = tol.exponent {
        checks.push(Check::within("Gamma exponent in delta", sweep.fitted_exponent, e, tol.exponent_tol));
    }
    match config.experiment {
        ExperimentKind::Optimality => {
            let half = sweep.rho_fit(LogCorrection::Half);
            let plain = sweep.rho_fit(LogCorrection::None);
            if let (Some(h), Some(p)) = (half, plain) {
                checks.push(Check::within("|rho| exponent with half log", h.exponent, tol.exponent.unwrap_or(2.0), tol.exponent_tol));
                checks.push(Check::flag("half log correction preferred by r2", h.r2 > p.r2));
            }
            let ratios: Vec<f64> = sweep.rows.iter().map(|r| r.rho_norm / r.gamma).collect();
            let grows = ratios.windows(2).all(|w| w[1] > w[0]);
            checks.push(Check::flag("|rho|/Gamma grows as delta decreases", grows));
        }
        _ => {
            checks.push(Check::at_most("dist/Gamma spread", sweep.ratio_spread, tol.spread_max));
            if let (Some(lt), Some(last)) = (tol.leader_tol, sweep.rows.last()) {
                checks.push(Check::within("projection over leader at smallest delta", last.leader_ratio, 1.0, lt));
            }
        }
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_grid_is_geometric_and_decreasing() {
        let v = DeltaGrid { max: 0.1, min: 0.01, count: 8 }.values().unwrap();
        assert_eq!(v.len(), 8);
        assert!((v[0] - 0.1).abs() < 1e-15 && (v[7] - 0.01).abs() < 1e-15);
        assert!(v.windows(2).all(|w| w[1] < w[0]));
        assert!(DeltaGrid { max: 0.01, min: 0.1, count: 8 }.values().is_err());
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for kind in [
            ExperimentKind::Constants,
            ExperimentKind::EuclidCheck,
            ExperimentKind::Scaling,
            ExperimentKind::Optimality,
            ExperimentKind::Coercivity,
            ExperimentKind::Nondegeneracy,
        ] {
            let c = ExperimentConfig::preset(kind);
            let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn constants_run_is_deterministic_and_rereads_its_output() {
        let dir = std::env::temp_dir().join(format!("bubblelab-constants-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = ExperimentConfig { dims: vec![3, 6, 8], ..ExperimentConfig::preset(ExperimentKind::Constants) };
        let first = run(&cfg, &dir, 1).unwrap();
        let a = std::fs::read(dir.join("constants.csv")).unwrap();
        let second = run(&cfg, &dir, 1).unwrap();
        let b = std::fs::read(dir.join("constants.csv")).unwrap();
        assert!(first.passed() && second.passed(), "{:?}", second.checks);
        assert!(second.checks.iter().any(|c| c.name == "diff against previous run"));
        assert_eq!(a, b);
        assert!(dir.join("manifest.json").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
