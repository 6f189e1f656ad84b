//! The deficit Gamma(u), constrained bubble fits u = u0 + sum V_i + rho, and the
//! projections of the residual pieces on Z^0.

use crate::bubble_euclid::{constants, critical_exponent, max_interaction, BubbleParams};
use crate::bubble_profiles::{build_profile, residual_bundle, CutoffSpec, Profile, ProfileVariant, ResidualContext};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, gram_solve};
use crate::model_manifold::{io, DiscreteManifold, Field, GreenData};
use crate::quad_engine::wrap;
use crate::spectral::{WeightedSpectrum, MAX_GRAM_CONDITION};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Nodal values below this are treated as negative input.
const CLIP_TOL: f64 = -1e-12;

fn check_nonnegative(u: &Field) -> Result<()> {
    if let Some(v) = u.values().iter().find(|&&v| v < CLIP_TOL) {
        return Err(Error::InvalidInput(format!("u must be nonnegative, found {v}")));
    }
    Ok(())
}

fn power_load(m: &DiscreteManifold, u: &[f64]) -> Vec<f64> {
    let p = critical_exponent::<f64>(m.dim()) - 1.0;
    u.iter().zip(m.weights()).map(|(v, w)| w * v.max(0.0).powf(p)).collect()
}

/// Gamma(u) = |L_g u - u^{2*-1}|_{H^{-1}} with L_g the assembled operator.
pub fn gamma_deficit(m: &DiscreteManifold, u: &Field) -> Result<f64> {
    check_nonnegative(u)?;
    let mut load = m.apply_operator(u)?;
    axpy(-1.0, &power_load(m, u.values()), &mut load);
    m.dual_norm_load(&load)
}

/// Gamma(rest + sum V_i), applying L_g to the profiles in closed form.
pub fn gamma_deficit_split(m: &DiscreteManifold, rest: &Field, profiles: &[&Profile]) -> Result<f64> {
    let mut u = rest.clone();
    let mut load = m.apply_operator(rest)?;
    for prof in profiles {
        u = u.plus_scaled(1.0, &prof.value)?;
        axpy(1.0, &prof.l_load(m)?, &mut load);
    }
    check_nonnegative(&u)?;
    axpy(-1.0, &power_load(m, u.values()), &mut load);
    m.dual_norm_load(&load)
}

/// How the profiles of a fit are built.
#[derive(Debug, Clone)]
pub struct ProfileFamily {
    pub variant: ProfileVariant,
    pub cutoff: CutoffSpec,
    /// Green's function with pole on the axis; translated to every center
    pub green: Option<GreenData>,
}

impl ProfileFamily {
    pub fn build(&self, m: &DiscreteManifold, delta: f64, center_t: f64) -> Result<Profile> {
        build_profile(m, self.variant, delta, center_t, self.cutoff, self.green.as_ref())
    }
}

/// Background of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum U0Mode {
    PositiveU0,
    ZeroU0,
}

/// Scale and axial position of one fitted bubble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBubble {
    pub delta: f64,
    pub center_t: f64,
}

/// Coefficients of rho along V_i, Z^k_i and psi_m.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: Vec<f64>,
    /// per bubble: Z^0 and the axial Z^1
    pub beta_k: Vec<[f64; 2]>,
    pub vartheta: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// maximal interaction
    pub q: f64,
    /// Gamma(u)
    pub gamma: f64,
    /// sum of the absolute coefficients
    pub amp: f64,
    /// |rho|_{H^1}
    pub rho_h1: f64,
    /// max |<rho, Z^k_i>_{H^1}| / (|rho|_{H^1} |Z^k_i|_{H^1})
    pub orthogonality: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Result of [`fit_bubbles`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub u0_mode: U0Mode,
    pub params: Vec<AxisBubble>,
    pub profiles: Vec<Profile>,
    /// u - u0 - sum V_i
    pub rho: Field,
    pub coefficients: Coefficients,
    pub diagnostics: FitDiagnostics,
    pub residual_norms: BTreeMap<String, f64>,
}

/// Serializable part of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub u0_mode: U0Mode,
    pub params: Vec<AxisBubble>,
    pub coefficients: Coefficients,
    pub diagnostics: FitDiagnostics,
    pub residual_norms: BTreeMap<String, f64>,
}

impl FitResult {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            u0_mode: self.u0_mode,
            params: self.params.clone(),
            coefficients: self.coefficients.clone(),
            diagnostics: self.diagnostics.clone(),
            residual_norms: self.residual_norms.clone(),
        }
    }

    /// Write `<stem>.json` and the field `<stem>.rho.bin`.
    pub fn save(&self, m: &DiscreteManifold, dir: &Path, stem: &str) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary()).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), text)?;
        io::write_field(&dir.join(format!("{stem}.rho.bin")), m, "rho", &self.rho)
    }

    pub fn profile_refs(&self) -> Vec<&Profile> {
        self.profiles.iter().collect()
    }
}

/// Options of the Gauss-Newton fit.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// stop once the parameter update is below this (log delta and t units)
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 60, step_tol: 1e-11 }
    }
}

struct Workspace<'a> {
    m: &'a DiscreteManifold,
    family: &'a ProfileFamily,
    /// u - u0
    target: Vec<f64>,
}

impl Workspace<'_> {
    fn profiles(&self, params: &[AxisBubble]) -> Result<Vec<Profile>> {
        params.iter().map(|b| self.family.build(self.m, b.delta, b.center_t)).collect()
    }

    fn residual(&self, profiles: &[Profile]) -> Vec<f64> {
        let mut r = self.target.clone();
        for prof in profiles {
            axpy(-1.0, prof.value.values(), &mut r);
        }
        r
    }

    fn objective(&self, r: &[f64]) -> f64 {
        0.5 * self.m.operator().form(r, r)
    }

    /// Gauss-Newton on (log delta_i, t_i) for the bubbles in `active`, others frozen.
    fn gauss_newton(&self, params: &mut [AxisBubble], active: &[usize], opts: FitOptions) -> Result<(usize, bool)> {
        let op = self.m.operator();
        let mut profiles = self.profiles(params)?;
        let mut r = self.residual(&profiles);
        let mut value = self.objective(&r);
        for iter in 0..opts.max_iterations {
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(2 * active.len());
            for &i in active {
                let prof = &profiles[i];
                cols.push(prof.z0.values().to_vec());
                cols.push(prof.axial.values().iter().map(|v| v / params[i].delta).collect());
            }
            let applied: Vec<Vec<f64>> = cols.iter().map(|c| op.apply(c)).collect();
            let k = cols.len();
            let jtj = DMatrix::from_fn(k, k, |a, b| dot(&cols[a], &applied[b]));
            let jtr = DVector::from_iterator(k, applied.iter().map(|a| dot(a, &r)));
            let step = gram_solve(&jtj, &jtr, 1e14)?;
            let size = step.amax();
            if size <= opts.step_tol {
                return Ok((iter, true));
            }
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial = params.to_vec();
                for (slot, &i) in active.iter().enumerate() {
                    trial[i].delta = params[i].delta * (scale * step[2 * slot]).exp();
                    trial[i].center_t = params[i].center_t + scale * step[2 * slot + 1];
                }
                if let Ok(trial_profiles) = self.profiles(&trial) {
                    let trial_r = self.residual(&trial_profiles);
                    let trial_value = self.objective(&trial_r);
                    if trial_value <= value {
                        params.copy_from_slice(&trial);
                        profiles = trial_profiles;
                        r = trial_r;
                        value = trial_value;
                        accepted = true;
                        break;
                    }
                }
                scale *= 0.5;
            }
            if !accepted {
                // stagnation: the best point so far is kept
                return Ok((iter, size * scale <= 1e3 * opts.step_tol));
            }
        }
        Ok((opts.max_iterations, false))
    }
}

fn initial_guess(m: &DiscreteManifold, residual: &[f64]) -> AxisBubble {
    let dim = m.dim();
    let (k, peak) = residual
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
    let alpha = crate::bubble_euclid::alpha::<f64>(dim);
    let delta = (alpha / peak.max(1e-300)).powf(2.0 / (dim as f64 - 2.0));
    AxisBubble { delta, center_t: m.node(k).t }
}

/// Bubble decomposition of `u` with `nu` bubbles on the axis.
///
/// `u0` is the background (None for the zero background); `spectrum` supplies
/// psi_1..psi_L for the coefficient split when u0 > 0.
pub fn fit_bubbles(
    m: &DiscreteManifold,
    u: &Field,
    nu: usize,
    u0: Option<&Field>,
    family: &ProfileFamily,
    spectrum: Option<&WeightedSpectrum>,
    init: Option<&[AxisBubble]>,
    opts: FitOptions,
) -> Result<FitResult> {
    if nu == 0 {
        return Err(Error::InvalidInput("at least one bubble is needed".into()));
    }
    m.check(u)?;
    let target = match u0 {
        Some(f) => u.plus_scaled(-1.0, f)?.into_values(),
        None => u.values().to_vec(),
    };
    let ws = Workspace { m, family, target };
    let mut params: Vec<AxisBubble> = Vec::with_capacity(nu);
    let mut iterations = 0;
    match init {
        Some(given) if given.len() == nu => params.extend_from_slice(given),
        Some(_) => return Err(Error::InvalidInput("initial guess has the wrong number of bubbles".into())),
        None => {
            // greedy extraction: largest remaining peak, fit it, subtract, repeat
            for i in 0..nu {
                let fitted = ws.profiles(&params)?;
                let rest = ws.residual(&fitted);
                let mut guess = initial_guess(m, &rest);
                guess.delta = guess.delta.min(family.cutoff.r0 / 5.0);
                params.push(guess);
                let (its, _) = ws.gauss_newton(&mut params, &[i], opts)?;
                iterations += its;
            }
        }
    }
    let all: Vec<usize> = (0..nu).collect();
    let (its, converged) = ws.gauss_newton(&mut params, &all, opts)?;
    iterations += its;

    let profiles = ws.profiles(&params)?;
    let rho = m.field(ws.residual(&profiles))?;
    let mode = if u0.is_some() { U0Mode::PositiveU0 } else { U0Mode::ZeroU0 };
    let refs: Vec<&Profile> = profiles.iter().collect();
    let rest = match u0 {
        Some(f) => f.plus_scaled(1.0, &rho)?,
        None => rho.clone(),
    };
    let gamma = gamma_deficit_split(m, &rest, &refs)?;
    let rho_h1 = m.h1_norm(&rho)?;
    let mut orthogonality: f64 = 0.0;
    for prof in &profiles {
        for z in [&prof.z0, &prof.axial] {
            let zn = m.h1_norm(z)?;
            if rho_h1 > 0.0 && zn > 0.0 {
                orthogonality = orthogonality.max(m.h1_inner(&rho, z)?.abs() / (rho_h1 * zn));
            }
        }
    }
    let coefficients = split_coefficients(m, &rho, &profiles, spectrum.filter(|_| u0.is_some()))?;
    let amp = coefficients.beta.iter().chain(coefficients.beta_k.iter().flatten()).chain(&coefficients.vartheta).map(|c| c.abs()).sum();
    let period = m.period();
    let bubble_params: Vec<BubbleParams<f64>> =
        params.iter().map(|b| BubbleParams { delta: b.delta, center: vec![b.center_t] }).collect();
    let q = max_interaction(m.dim(), &bubble_params, |i, j| wrap(params[i].center_t - params[j].center_t, period).abs());
    let bundle = residual_bundle(m, u0, &refs, &rho)?;
    let residual_norms = bundle.norms.iter().cloned().collect();
    Ok(FitResult {
        u0_mode: mode,
        params,
        profiles,
        rho,
        coefficients,
        diagnostics: FitDiagnostics { q, gamma, amp, rho_h1, orthogonality, iterations, converged },
        residual_norms,
    })
}

/// Coefficients of the H^1 projection of rho on span{V_i, Z^k_i, psi_m}.
fn split_coefficients(
    m: &DiscreteManifold,
    rho: &Field,
    profiles: &[Profile],
    spectrum: Option<&WeightedSpectrum>,
) -> Result<Coefficients> {
    let mut basis: Vec<&Field> = Vec::new();
    for prof in profiles {
        basis.extend([&prof.value, &prof.z0, &prof.axial]);
    }
    let modes = spectrum.map_or(0, |s| s.below_critical);
    if let Some(s) = spectrum {
        basis.extend(s.eigenfields.iter().take(modes));
    }
    let k = basis.len();
    let norms: Vec<f64> = basis.iter().map(|f| m.h1_norm(f)).collect::<Result<_>>()?;
    let mut gram = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = m.h1_inner(basis[a], basis[b])? / (norms[a] * norms[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let rhs = DVector::from_iterator(k, (0..k).map(|a| m.h1_inner(basis[a], rho).map(|v| v / norms[a])).collect::<Result<Vec<_>>>()?);
    let c = gram_solve(&gram, &rhs, MAX_GRAM_CONDITION)?;
    let coef: Vec<f64> = (0..k).map(|a| c[a] / norms[a]).collect();
    let nb = profiles.len();
    Ok(Coefficients {
        beta: (0..nb).map(|i| coef[3 * i]).collect(),
        beta_k: (0..nb).map(|i| [coef[3 * i + 1], coef[3 * i + 2]]).collect(),
        vartheta: coef[3 * nb..].to_vec(),
    })
}

/// Integrals of the residual pieces against Z^0_j with their predicted leading values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub j: usize,
    pub context: ResidualContext,
    /// (piece, int piece * Z^0_j)
    pub pieces: Vec<(String, f64)>,
    /// (name, predicted leading value)
    pub leaders: Vec<(String, f64)>,
}

impl ProjectionReport {
    pub fn piece(&self, name: &str) -> Option<f64> {
        self.pieces.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn leader(&self, name: &str) -> Option<f64> {
        self.leaders.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Project the residual pieces of a fit on Z^0 of bubble `j`.
///
/// Leaders: a_N u0(xi_j) delta_j^{(N-2)/2} for the u0 interaction, b_N A_g delta_j^{N-2}
/// for the Green's function term, and sum_{i != j} q_ij for the bubble interaction.
pub fn project_on_z0(
    m: &DiscreteManifold,
    fit: &FitResult,
    j: usize,
    u0: Option<&Field>,
    green: Option<&GreenData>,
) -> Result<ProjectionReport> {
    if j >= fit.profiles.len() {
        return Err(Error::InvalidInput(format!("no bubble {j}")));
    }
    let refs = fit.profile_refs();
    let bundle = residual_bundle(m, u0, &refs, &fit.rho)?;
    let z0 = &fit.profiles[j].z0;
    let pieces = bundle
        .pieces
        .iter()
        .map(|(name, f)| m.l2_inner(f, z0).map(|v| (name.clone(), v)))
        .collect::<Result<Vec<_>>>()?;
    let dim = m.dim();
    let nf = dim as f64;
    let bj = fit.params[j];
    let mut leaders = Vec::new();
    if let Some(u0) = u0 {
        let k = m.index(m.nearest_t_index(bj.center_t), 0);
        leaders.push(("a".to_string(), constants::a_constant(dim) * u0.values()[k] * bj.delta.powf(0.5 * (nf - 2.0))));
    }
    if let Some(g) = green {
        leaders.push(("b".to_string(), constants::b_constant(dim) * g.mass * bj.delta.powf(nf - 2.0)));
    }
    if fit.params.len() > 1 {
        let period = m.period();
        let mine = BubbleParams { delta: bj.delta, center: vec![bj.center_t] };
        let sum: f64 = fit
            .params
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, b)| {
                let other = BubbleParams { delta: b.delta, center: vec![b.center_t] };
                crate::bubble_euclid::interaction(dim, &mine, &other, wrap(b.center_t - bj.center_t, period).abs()).q
            })
            .sum();
        leaders.push(("interaction".to_string(), sum));
    }
    Ok(ProjectionReport { j, context: bundle.context, pieces, leaders })
}
