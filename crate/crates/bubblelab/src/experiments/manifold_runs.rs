//! Experiments on the product model: sanity checks, non-degeneracy scans, coercivity,
//! deficit scaling sweeps and the single-bubble optimality construction.

use super::zeta::{fit_power_law, fit_zeta, LogCorrection, PowerFit, ZetaFit};
use crate::bubble_euclid::critical_exponent;
use crate::bubble_profiles::{select_variant, CutoffSpec, Profile};
use crate::decomposition::{fit_bubbles, gamma_deficit, gamma_deficit_split, project_on_z0, AxisBubble, FitOptions, ProfileFamily};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::model_manifold::{DiscreteManifold, Field, GreenData, ManifoldSpec};
use crate::spectral::{
    coercivity_gap, constant_solution, crossings, nondegeneracy_scan, product_smallest_eigenvalue,
    top_weighted_mode, unconstrained_gap, weighted_eigs, weighted_spectrum_certified, ScanPoint,
};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Evaluate `f(0..n)` on up to `jobs` threads; results come back in index order.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= n {
                    break;
                }
                let r = f(k);
                slots.lock().expect("result slots")[k] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every index evaluated")).collect()
}

/// Equally spaced axial bubble centers.
pub fn axis_centers(m: &DiscreteManifold, nu: usize) -> Vec<f64> {
    (0..nu).map(|i| i as f64 * m.period() / nu as f64).collect()
}

/// The given spec graded around `centers` (grading scale and node count kept).
pub fn graded_manifold(spec: &ManifoldSpec, centers: Vec<f64>) -> Result<DiscreteManifold> {
    let mut spec = spec.clone();
    if let Some(g) = spec.grading.as_mut() {
        g.centers = centers;
    }
    DiscreteManifold::build(spec)
}

/// Smallest node spacing of the grids (in t and in theta).
pub fn finest_spacing(m: &DiscreteManifold) -> f64 {
    let th = m.grid_theta().min_spacing();
    m.grid_t().map_or(th, |g| g.min_spacing().min(th))
}

// ---------------------------------------------------------------- sanity

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub gamma_u0: f64,
    pub gamma_u0_fine: f64,
    pub mu1: f64,
    pub mass: f64,
    pub mass_error: f64,
    pub mass_fine: f64,
}

/// Deficit of the constant solution under grid doubling, first weighted eigenvalue,
/// and the Green's function mass against a doubled grid.
pub fn run_manifold_sanity(radius: f64, dim: usize, n_t: usize, n_theta: usize) -> Result<SanityReport> {
    let m = DiscreteManifold::build(ManifoldSpec::product(radius, dim, n_t, n_theta))?;
    let fine = DiscreteManifold::build(ManifoldSpec::product(radius, dim, 2 * n_t, 2 * n_theta))?;
    let u0 = constant_solution(&m);
    let gamma_u0 = gamma_deficit(&m, &u0)?;
    let gamma_u0_fine = gamma_deficit(&fine, &constant_solution(&fine))?;
    let mu1 = weighted_eigs(&m, &u0, 1)?.eigenvalues[0];
    let green = m.greens_function(0.0, f64::INFINITY)?;
    let mass_fine = fine.greens_function(0.0, f64::INFINITY)?.mass;
    Ok(SanityReport { gamma_u0, gamma_u0_fine, mu1, mass: green.mass, mass_error: green.mass_error, mass_fine })
}

// ---------------------------------------------------------------- non-degeneracy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub scan: Vec<ScanPoint>,
    pub oracle: Vec<f64>,
    pub crossings: Vec<f64>,
    pub oracle_crossings: Vec<f64>,
    /// max over radii of |discrete - closed form| smallest eigenvalue
    pub max_oracle_gap: f64,
}

pub fn run_nondegeneracy(dim: usize, radii: &[f64], n_t: usize, n_theta: usize, threshold: f64) -> Result<NondegeneracyReport> {
    let scan = nondegeneracy_scan(dim, radii, n_t, n_theta)?;
    let oracle: Vec<f64> = radii.iter().map(|&r| product_smallest_eigenvalue(dim, r)).collect();
    let oracle_points: Vec<ScanPoint> = radii
        .iter()
        .zip(&oracle)
        .map(|(&radius, &smallest)| ScanPoint { radius, smallest, below_critical: 0 })
        .collect();
    let max_oracle_gap = scan.iter().zip(&oracle).map(|(s, o)| (s.smallest - o).abs()).fold(0.0, f64::max);
    Ok(NondegeneracyReport {
        crossings: crossings(&scan, threshold),
        oracle_crossings: crossings(&oracle_points, threshold),
        scan,
        oracle,
        max_oracle_gap,
    })
}

// ---------------------------------------------------------------- shared setup

/// Everything fixed along a delta sweep.
pub struct SweepSetup {
    pub m: DiscreteManifold,
    pub u0: Option<Field>,
    pub family: ProfileFamily,
    pub green: Option<GreenData>,
    pub centers: Vec<f64>,
}

impl SweepSetup {
    /// `positive` selects u0 > 0 (the constant solution) or u0 = 0.
    pub fn new(spec: &ManifoldSpec, nu: usize, positive: bool) -> Result<Self> {
        let probe = DiscreteManifold::build(ManifoldSpec { grading: None, ..spec.clone() })?;
        let centers = axis_centers(&probe, nu);
        let m = graded_manifold(spec, centers.clone())?;
        let dim = m.dim();
        let variant = select_variant(dim, true, positive);
        let green = if variant.tag == crate::bubble_profiles::ProfileTag::GreenGlued {
            Some(m.greens_function(0.0, f64::INFINITY)?)
        } else {
            None
        };
        let u0 = positive.then(|| constant_solution(&m));
        let cutoff = CutoffSpec::new(m.spec().default_r0());
        let family = ProfileFamily { variant, cutoff, green: green.clone() };
        Ok(Self { m, u0, family, green, centers })
    }

    pub fn profiles(&self, delta: f64) -> Result<Vec<Profile>> {
        self.centers.iter().map(|&c| self.family.build(&self.m, delta, c)).collect()
    }

    pub fn truth(&self, delta: f64) -> Vec<AxisBubble> {
        self.centers.iter().map(|&center_t| AxisBubble { delta, center_t }).collect()
    }

    /// u0 + sum V_i
    pub fn base(&self, profiles: &[Profile]) -> Result<Field> {
        let mut base = self.u0.clone().unwrap_or_else(|| self.m.zeros());
        for p in profiles {
            base = base.plus_scaled(1.0, &p.value)?;
        }
        Ok(base)
    }

    /// Grid check: the smallest delta spans at least ten of the finest cells.
    pub fn check_deltas(&self, deltas: &[f64]) -> Result<()> {
        let h = finest_spacing(&self.m);
        let lo = deltas.iter().cloned().fold(f64::MAX, f64::min);
        if lo < 10.0 * h {
            return Err(Error::InvalidInput(format!("smallest delta {lo} below ten grid cells ({h})")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- coercivity

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityRow {
    #[serde(rename = "N")]
    pub dim: usize,
    pub nu: usize,
    pub positive_u0: bool,
    pub delta: f64,
    pub gap: f64,
    pub unconstrained: f64,
}

pub fn run_coercivity(spec: &ManifoldSpec, nu: usize, positive: bool, deltas: &[f64], jobs: usize) -> Result<Vec<CoercivityRow>> {
    let setup = SweepSetup::new(spec, nu, positive)?;
    setup.check_deltas(deltas)?;
    let spectrum = match &setup.u0 {
        Some(u0) => Some(weighted_spectrum_certified(&setup.m, u0)?),
        None => None,
    };
    setup.m.solve_load(&vec![0.0; setup.m.len()])?;
    parallel_map(deltas.len(), jobs, |k| {
        let profiles = setup.profiles(deltas[k])?;
        let refs: Vec<&Profile> = profiles.iter().collect();
        let gap = coercivity_gap(&setup.m, setup.u0.as_ref(), &refs, spectrum.as_ref())?;
        let unconstrained = unconstrained_gap(&setup.m, setup.u0.as_ref(), &refs)?;
        Ok(CoercivityRow { dim: setup.m.dim(), nu, positive_u0: positive, delta: deltas[k], gap, unconstrained })
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------- scaling sweeps

/// One delta of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub delta: f64,
    /// Gamma(u_*)
    pub gamma: f64,
    /// |rho_fit|_{H^1}: distance of u_* to the bubble family
    pub dist: f64,
    /// |rho|_{H^1} of the constructed perturbation
    pub rho_norm: f64,
    /// int (bubble piece) Z^0 / predicted leader
    pub leader_ratio: f64,
    pub q: f64,
    pub converged: bool,
}

/// A sweep with its fitted laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRun {
    pub rows: Vec<ScalingRow>,
    /// exponent of Gamma against delta
    pub fitted_exponent: f64,
    pub log_correction: LogCorrection,
    pub r2: f64,
    /// max/min of dist / Gamma
    pub ratio_spread: f64,
    /// fits of |rho| against delta, one per log correction
    pub rho_fits: Vec<PowerFit>,
    /// zeta fit of |rho| against Gamma, when the rows allow one
    pub zeta: Option<ZetaFit>,
}

impl ScalingRun {
    fn from_rows(rows: Vec<ScalingRow>, dim: usize) -> Result<Self> {
        let d: Vec<f64> = rows.iter().map(|r| r.delta).collect();
        let g: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
        let rho: Vec<f64> = rows.iter().map(|r| r.rho_norm).collect();
        let fit = fit_power_law(&d, &g, LogCorrection::None)?;
        let ratios: Vec<f64> = rows.iter().map(|r| r.dist / r.gamma).collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let rho_fits = LogCorrection::ALL.iter().map(|&c| fit_power_law(&d, &rho, c)).collect::<Result<_>>()?;
        let zeta = fit_zeta(&g, &rho, dim).ok();
        Ok(Self {
            rows,
            fitted_exponent: fit.exponent,
            log_correction: fit.log_correction,
            r2: fit.r2,
            ratio_spread: hi / lo,
            rho_fits,
            zeta,
        })
    }

    pub fn rho_fit(&self, c: LogCorrection) -> Option<&PowerFit> {
        self.rho_fits.iter().find(|f| f.log_correction == c)
    }

    /// Columns: delta, gamma, dist, rho_norm, leader_ratio, q, converged.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        super::analytic::write_rows(out, &self.rows)
    }
}

fn collect_rows(results: Vec<Result<ScalingRow>>) -> std::result::Result<Vec<ScalingRow>, (Vec<ScalingRow>, Error)> {
    let mut rows = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => return Err((rows, e)),
        }
    }
    Ok(rows)
}

/// Failure of a sweep with the rows completed before it.
#[derive(Debug)]
pub struct PartialSweep {
    pub rows: Vec<ScalingRow>,
    pub error: Error,
}

/// u_* = u0 + sum V_i + eps phi with eps = delta^{(N-2)/2} (delta^{N-2} when u0 = 0) and phi
/// the first constrained mode of the linearized operator; Gamma(u_*) and the fit distance.
pub fn run_scaling(
    spec: &ManifoldSpec,
    nu: usize,
    positive: bool,
    deltas: &[f64],
    jobs: usize,
) -> std::result::Result<ScalingRun, PartialSweep> {
    let fail = |error| PartialSweep { rows: Vec::new(), error };
    let setup = SweepSetup::new(spec, nu, positive).map_err(fail)?;
    setup.check_deltas(deltas).map_err(fail)?;
    if setup.m.dim() > 3 && nu > 1 {
        return Err(fail(Error::InvalidInput("several bubbles are run in dimension 3 only".into())));
    }
    setup.m.solve_load(&vec![0.0; setup.m.len()]).map_err(fail)?;
    let dim = setup.m.dim() as f64;
    let results = parallel_map(deltas.len(), jobs, |k| {
        let delta = deltas[k];
        let profiles = setup.profiles(delta)?;
        let base = setup.base(&profiles)?;
        let constraints: Vec<&Field> = profiles.iter().flat_map(|p| [&p.z0, &p.axial]).collect();
        let (_, phi) = top_weighted_mode(&setup.m, &base, &constraints, 1e-9)?;
        let eps = if positive { delta.powf(0.5 * (dim - 2.0)) } else { delta.powf(dim - 2.0) };
        let u = base.plus_scaled(eps, &phi)?;
        let gamma = gamma_deficit(&setup.m, &u)?;
        let truth = setup.truth(delta);
        let fit = fit_bubbles(&setup.m, &u, nu, setup.u0.as_ref(), &setup.family, None, Some(&truth), FitOptions::default())?;
        if !fit.diagnostics.converged {
            return Err(Error::NoConvergence(format!("bubble fit at delta = {delta}: {:?}", fit.diagnostics)));
        }
        let report = project_on_z0(&setup.m, &fit, 0, setup.u0.as_ref(), setup.green.as_ref())?;
        let leader_ratio = match (positive, report.leader("a"), report.leader("b")) {
            (true, Some(a), _) => report.piece("I2").or(report.piece("III2")).unwrap_or(f64::NAN) / a,
            (false, _, Some(b)) => report.piece("II3").unwrap_or(f64::NAN) / b,
            _ => f64::NAN,
        };
        Ok(ScalingRow {
            delta,
            gamma,
            dist: fit.diagnostics.rho_h1,
            rho_norm: eps * setup.m.h1_norm(&phi)?,
            leader_ratio,
            q: fit.diagnostics.q,
            converged: fit.diagnostics.converged,
        })
    });
    let rows = collect_rows(results).map_err(|(rows, error)| PartialSweep { rows, error })?;
    ScalingRun::from_rows(rows, setup.m.dim()).map_err(fail)
}

// ---------------------------------------------------------------- optimality

/// Solution of the constrained problem at one delta.
#[derive(Debug, Clone)]
pub struct OptimalityPoint {
    pub rho: Field,
    /// multipliers of L_g Z^0 and L_g Z^1
    pub multipliers: [f64; 2],
    pub gamma: f64,
    /// |sum c_k L_g Z^k|_{H^{-1}}, equal to gamma at convergence
    pub gamma_multipliers: f64,
    pub iterations: usize,
    /// dual norm of the equation residual per iteration
    pub history: Vec<f64>,
}

/// Newton iteration for rho H^1-orthogonal to Z^0, Z^1 and multipliers c solving
/// L_g u - u^{2*-1} = sum c_k L_g Z^k with u = u0 + V + rho.
pub fn solve_optimality(m: &DiscreteManifold, u0: &Field, profile: &Profile, max_iterations: usize, tol: f64) -> Result<OptimalityPoint> {
    let n = m.len();
    let p = critical_exponent::<f64>(m.dim()) - 1.0;
    let op = m.operator();
    let base = u0.plus_scaled(1.0, &profile.value)?.into_values();
    let z = [profile.z0.values(), profile.axial.values()];
    let b: Vec<Vec<f64>> = z.iter().map(|zk| op.apply(zk)).collect();
    let weights = m.weights();
    let mut rho = vec![0.0; n];
    let mut c = Vector2::<f64>::zeros();
    // L_g V in closed form: the assembled operator on the bubble core carries an (h/delta)^2 error
    let profile_load = profile.l_load(m)?;
    let u0_values = u0.values();
    let mut history = Vec::new();
    for iter in 0..max_iterations {
        let w: Vec<f64> = base.iter().zip(&rho).map(|(a, r)| a + r).collect();
        let smooth: Vec<f64> = u0_values.iter().zip(&rho).map(|(a, r)| a + r).collect();
        let mut f = op.apply(&smooth);
        axpy(1.0, &profile_load, &mut f);
        for k in 0..n {
            f[k] -= weights[k] * w[k].max(0.0).powf(p);
        }
        axpy(-c[0], &b[0], &mut f);
        axpy(-c[1], &b[1], &mut f);
        let g = Vector2::new(dot(&b[0], &rho), dot(&b[1], &rho));
        history.push(m.dual_norm_load(&f)?);
        let shift: Vec<f64> = (0..n).map(|k| weights[k] * p * w[k].max(0.0).powf(p - 1.0)).collect();
        let lu = op.shifted(&shift).lu()?;
        let x: Vec<Vec<f64>> = b.iter().map(|bk| lu.solve(bk)).collect();
        let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let y = lu.solve(&neg_f);
        let s = Matrix2::new(dot(&b[0], &x[0]), dot(&b[0], &x[1]), dot(&b[1], &x[0]), dot(&b[1], &x[1]));
        let rhs = -g - Vector2::new(dot(&b[0], &y), dot(&b[1], &y));
        let dc = s.lu().solve(&rhs).ok_or_else(|| Error::Factorization("singular multiplier system".into()))?;
        let mut drho = y;
        axpy(dc[0], &x[0], &mut drho);
        axpy(dc[1], &x[1], &mut drho);
        for (r, d) in rho.iter_mut().zip(&drho) {
            *r += d;
        }
        c += dc;
        let step = op.form(&drho, &drho).max(0.0).sqrt();
        let size = op.form(&rho, &rho).max(0.0).sqrt();
        if !step.is_finite() || history.last().is_some_and(|h| !h.is_finite()) {
            break;
        }
        let settled = step <= tol * size.max(f64::MIN_POSITIVE) && dc.amax() <= tol * c.amax().max(f64::MIN_POSITIVE);
        // residual at the roundoff floor of the assembled system
        let floor = iter > 0 && history[iter] <= 1e-8 * history[0];
        if settled || floor {
            let rho = m.field(rho)?;
            let gamma = gamma_deficit_split(m, &u0.plus_scaled(1.0, &rho)?, &[profile])?;
            let mut load = b[0].iter().map(|v| c[0] * v).collect::<Vec<_>>();
            axpy(c[1], &b[1], &mut load);
            let gamma_multipliers = m.dual_norm_load(&load)?;
            return Ok(OptimalityPoint { rho, multipliers: [c[0], c[1]], gamma, gamma_multipliers, iterations: iter + 1, history });
        }
    }
    Err(Error::NoConvergence(format!("optimality iteration did not contract; residual history {history:?}")))
}

/// Sweep of the optimality construction (single bubble, u0 > 0 constant).
pub fn run_optimality(spec: &ManifoldSpec, deltas: &[f64], jobs: usize) -> std::result::Result<ScalingRun, PartialSweep> {
    let fail = |error| PartialSweep { rows: Vec::new(), error };
    let setup = SweepSetup::new(spec, 1, true).map_err(fail)?;
    setup.check_deltas(deltas).map_err(fail)?;
    setup.m.solve_load(&vec![0.0; setup.m.len()]).map_err(fail)?;
    let u0 = setup.u0.as_ref().expect("positive background");
    let results = parallel_map(deltas.len(), jobs, |k| {
        let delta = deltas[k];
        let profile = setup.family.build(&setup.m, delta, setup.centers[0])?;
        let point = solve_optimality(&setup.m, u0, &profile, 40, 1e-9)?;
        let u = u0.plus_scaled(1.0, &profile.value)?.plus_scaled(1.0, &point.rho)?;
        let fit = fit_bubbles(&setup.m, &u, 1, Some(u0), &setup.family, None, Some(&setup.truth(delta)), FitOptions::default())?;
        let report = project_on_z0(&setup.m, &fit, 0, Some(u0), setup.green.as_ref())?;
        let leader_ratio = report.piece("III2").unwrap_or(f64::NAN) / report.leader("a").unwrap_or(f64::NAN);
        Ok(ScalingRow {
            delta,
            gamma: point.gamma,
            dist: fit.diagnostics.rho_h1,
            rho_norm: setup.m.h1_norm(&point.rho)?,
            leader_ratio,
            q: 0.0,
            converged: fit.diagnostics.converged,
        })
    });
    let rows = collect_rows(results).map_err(|(rows, error)| PartialSweep { rows, error })?;
    ScalingRun::from_rows(rows, setup.m.dim()).map_err(fail)
}
