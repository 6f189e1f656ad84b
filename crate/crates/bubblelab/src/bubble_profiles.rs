//! Bubble-like profiles on the model manifolds, their parameter derivatives, and
//! the residual decompositions used by the stability estimates.
//!
//! Three constructions, all centered on the symmetry axis at height `center_t`:
//!
//! * truncated bubble plus constant tail, chi U(d_g) + (1 - chi) U(r0/2);
//! * Green-glued bubble, gamma_N G_g [chi rho^{N-2} U(rho) + (1 - chi) alpha_N delta^{(N-2)/2}];
//! * conformally truncated bubble, Lambda chi(rho) U(rho),
//!
//! where rho is the distance in the flat conformal metric and Lambda its conformal factor.
//! L_g of each profile is split into a part known in closed form at the nodes and a
//! smooth remainder (the Green's function regular part times a bounded factor) on which
//! the assembled operator acts.

use crate::bubble_euclid::{alpha, critical_exponent, green_normalization};
use crate::error::{Error, Result};
use crate::model_manifold::{DiscreteManifold, Field, GreenData, ManifoldKind};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Radial cutoff chi: 1 on [0, r0/2], 0 on [r0, inf), a smoothstep polynomial in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub r0: f64,
    /// polynomial order of the transition: 3 (C^1) or 5 (C^2)
    pub smoothness: u32,
}

impl CutoffSpec {
    /// Quintic (C^2) cutoff of radius r0.
    pub fn new(r0: f64) -> Self {
        Self { r0, smoothness: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0) || !matches!(self.smoothness, 3 | 5) {
            return Err(Error::InvalidInput(format!("bad cutoff {self:?}")));
        }
        Ok(())
    }

    fn unit(&self, rho: f64) -> f64 {
        (2.0 * rho / self.r0 - 1.0).clamp(0.0, 1.0)
    }

    pub fn value(&self, rho: f64) -> f64 {
        let x = self.unit(rho);
        match self.smoothness {
            3 => 1.0 - x * x * (3.0 - 2.0 * x),
            _ => 1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x),
        }
    }

    /// d chi / d rho
    pub fn d1(&self, rho: f64) -> f64 {
        let x = self.unit(rho);
        let s = 2.0 / self.r0;
        match self.smoothness {
            3 => -6.0 * x * (1.0 - x) * s,
            _ => -30.0 * x * x * (1.0 - x) * (1.0 - x) * s,
        }
    }

    /// d^2 chi / d rho^2
    pub fn d2(&self, rho: f64) -> f64 {
        if !self.transition(rho) {
            return 0.0;
        }
        let x = self.unit(rho);
        let s = 2.0 / self.r0;
        match self.smoothness {
            3 => -6.0 * (1.0 - 2.0 * x) * s * s,
            _ => -60.0 * x * (1.0 - x) * (1.0 - 2.0 * x) * s * s,
        }
    }

    /// Whether rho lies in the open transition annulus.
    pub fn transition(&self, rho: f64) -> bool {
        rho > 0.5 * self.r0 && rho < self.r0
    }

    fn jet(&self, r: Jet) -> Jet {
        Jet { v: self.value(r.v), d: self.d1(r.v) * r.d, dd: self.d2(r.v) * r.d * r.d + self.d1(r.v) * r.dd }
    }
}

/// Which construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileTag {
    TruncatedPlusTail,
    GreenGlued,
    ConformalTruncated,
}

/// How the conformal factor is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConformalMode {
    /// the exact cylinder-to-flat factor of the product model
    ExactLcf,
    /// Lambda = 1, geodesic normal distance
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileVariant {
    pub tag: ProfileTag,
    pub conformal_factor_mode: ConformalMode,
}

/// Construction used for dimension `n`, conformal flatness and the sign of u0.
pub fn select_variant(n: usize, lcf: bool, u0_positive: bool) -> ProfileVariant {
    let tag = if n <= 5 {
        if u0_positive {
            ProfileTag::TruncatedPlusTail
        } else {
            ProfileTag::GreenGlued
        }
    } else if lcf || (!u0_positive && n <= 10) {
        ProfileTag::GreenGlued
    } else {
        ProfileTag::ConformalTruncated
    };
    let conformal_factor_mode = if lcf { ConformalMode::ExactLcf } else { ConformalMode::Identity };
    ProfileVariant { tag, conformal_factor_mode }
}

/// Second order jet (value, first and second derivative) in one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Jet {
    v: f64,
    d: f64,
    dd: f64,
}

impl Jet {
    fn var(x: f64) -> Self {
        Self { v: x, d: 1.0, dd: 0.0 }
    }

    fn constant(c: f64) -> Self {
        Self { v: c, d: 0.0, dd: 0.0 }
    }

    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: self.d + o.d, dd: self.dd + o.dd }
    }

    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: self.d - o.d, dd: self.dd - o.dd }
    }

    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, d: self.d * o.v + self.v * o.d, dd: self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd }
    }

    fn scale(self, c: f64) -> Self {
        Self { v: c * self.v, d: c * self.d, dd: c * self.dd }
    }

    fn powf(self, a: f64) -> Self {
        let p1 = self.v.powf(a - 1.0);
        let p2 = if a == 1.0 { 0.0 } else { (a - 1.0) * self.v.powf(a - 2.0) };
        Self { v: p1 * self.v, d: a * p1 * self.d, dd: a * (p2 * self.d * self.d + p1 * self.dd) }
    }
}

/// Radial jets of the bubble U_{delta,0}(r) and of delta dU/d delta.
fn bubble_jets(dim: usize, delta: f64, r: f64) -> (Jet, Jet) {
    let m = 0.5 * (dim as f64 - 2.0);
    let x = Jet::var(r);
    let q = x.mul(x).add(Jet::constant(delta * delta));
    let u = q.powf(-m).scale(alpha::<f64>(dim) * delta.powf(m));
    // delta dU/d delta = m U (r^2 - delta^2)/(r^2 + delta^2) = m U (1 - 2 delta^2 / q)
    let factor = Jet::constant(1.0).sub(q.powf(-1.0).scale(2.0 * delta * delta));
    (u, u.mul(factor).scale(m))
}

fn bubble_value(dim: usize, delta: f64, r: f64) -> f64 {
    let m = 0.5 * (dim as f64 - 2.0);
    alpha::<f64>(dim) * (delta / (delta * delta + r * r)).powf(m)
}

fn bubble_delta_derivative(dim: usize, delta: f64, r: f64) -> f64 {
    let m = 0.5 * (dim as f64 - 2.0);
    m * bubble_value(dim, delta, r) * (r * r - delta * delta) / (r * r + delta * delta)
}

/// Radial Laplacian F'' + (k-1) F'/r of a jet, with the r -> 0 limit k F''.
fn flat_laplacian(j: Jet, r: f64, k: f64) -> f64 {
    if r > 0.0 {
        j.dd + (k - 1.0) * j.d / r
    } else {
        k * j.dd
    }
}

/// Parameters of one profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub variant: ProfileVariant,
    pub delta: f64,
    pub center_t: f64,
}

/// An evaluated profile with its parameter derivatives.
#[derive(Debug, Clone)]
pub struct Profile {
    pub params: ProfileParams,
    pub cutoff: CutoffSpec,
    /// V
    pub value: Field,
    /// delta dV/d delta
    pub z0: Field,
    /// delta dV/d xi along the circle direction
    pub axial: Field,
    /// nodal values of L_g V
    l_values: Vec<f64>,
}

impl Profile {
    /// Weak action of L_g on V as a load vector.
    pub fn l_load(&self, m: &DiscreteManifold) -> Result<Vec<f64>> {
        m.check(&self.value)?;
        Ok(m.weights().iter().zip(&self.l_values).map(|(w, l)| w * l).collect())
    }

    /// Nodal values of L_g V.
    pub fn l_pointwise(&self, m: &DiscreteManifold) -> Result<Field> {
        m.check(&self.value)?;
        Ok(m.wrap_values(self.l_values.clone()))
    }

    /// Profile parameters as Euclidean bubble parameters (axis coordinate as center).
    pub fn delta(&self) -> f64 {
        self.params.delta
    }
}

/// Build V_{delta, xi} with xi the axis point at height `center_t`.
pub fn build_profile(
    m: &DiscreteManifold,
    variant: ProfileVariant,
    delta: f64,
    center_t: f64,
    cutoff: CutoffSpec,
    green: Option<&GreenData>,
) -> Result<Profile> {
    cutoff.validate()?;
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    if delta > cutoff.r0 / 5.0 {
        return Err(Error::ScaleTooLarge { delta, r0: cutoff.r0 });
    }
    let params = ProfileParams { variant, delta, center_t };
    let n = m.len();
    let mut value = vec![0.0; n];
    let mut z0 = vec![0.0; n];
    let mut axial = vec![0.0; n];
    let mut l_values = vec![0.0; n];
    let dim = m.dim();
    let nf = dim as f64;
    let kr = m.kappa_r();
    let product = matches!(m.spec().kind, ManifoldKind::ProductCircleSphere { .. });
    match variant.tag {
        ProfileTag::TruncatedPlusTail => {
            let tail = bubble_value(dim, delta, 0.5 * cutoff.r0);
            let tail_z = bubble_delta_derivative(dim, delta, 0.5 * cutoff.r0);
            for k in 0..n {
                let p = m.node(k);
                let s = if product { crate::quad_engine::wrap(p.t - center_t, m.period()) } else { 0.0 };
                let d = m.axis_distance(center_t, k);
                let chi = cutoff.jet(Jet::var(d));
                let (u, du) = bubble_jets(dim, delta, d);
                let f = chi.mul(u).add(Jet::constant(1.0).sub(chi).scale(tail));
                value[k] = f.v;
                z0[k] = chi.v * du.v + (1.0 - chi.v) * tail_z;
                let lap = if product {
                    // F'' + F'/d + (N-2) cot(theta) theta/d F' for F(sqrt(s^2 + theta^2))
                    if d > 0.0 {
                        let ratio = if p.theta > 0.0 { p.theta / p.theta.tan() } else { 1.0 };
                        f.dd + f.d / d + (nf - 2.0) * ratio * f.d / d
                    } else {
                        nf * f.dd
                    }
                } else if d > 0.0 {
                    f.dd + (nf - 1.0) * f.d / d.tan()
                } else {
                    nf * f.dd
                };
                l_values[k] = -lap + kr * f.v;
                axial[k] = if product && d > 0.0 { -delta * f.d * s / d } else { 0.0 };
            }
        }
        ProfileTag::ConformalTruncated | ProfileTag::GreenGlued => {
            if variant.conformal_factor_mode != ConformalMode::ExactLcf || !product {
                return Err(Error::InvalidInput(
                    "conformally flat profiles need the product model with its exact conformal factor".into(),
                ));
            }
            let chart = m.flat_chart(center_t)?;
            let p_exp = critical_exponent::<f64>(dim) - 1.0;
            let half = 0.5 * (nf - 2.0);
            let glued = variant.tag == ProfileTag::GreenGlued;
            let green = if glued { Some(green.ok_or(Error::GreenMissing)?) } else { None };
            let gamma = green_normalization::<f64>(dim);
            let amp = alpha::<f64>(dim) * delta.powf(half);
            for k in 0..n {
                let node = m.node(k);
                let q = chart.point(node.t, node.theta);
                let rho = q.rho;
                let chi = cutoff.jet(Jet::var(rho));
                let (u, du) = bubble_jets(dim, delta, rho);
                // phi: the analytic part divided by Lambda, a radial function of rho
                let (phi, dphi) = if glued {
                    // chi^2 U + chi (1 - chi) rho^{2-N} alpha delta^{(N-2)/2}
                    let one_minus = Jet::constant(1.0).sub(chi);
                    let mixed = if chi.v < 1.0 {
                        chi.mul(one_minus).mul(Jet::var(rho).powf(2.0 - nf))
                    } else {
                        Jet::constant(0.0)
                    };
                    (
                        chi.mul(chi).mul(u).add(mixed.scale(amp)),
                        chi.mul(chi).mul(du).add(mixed.scale(half * amp)),
                    )
                } else {
                    (chi.mul(u), chi.mul(du))
                };
                let lam = q.lambda;
                value[k] = lam * phi.v;
                z0[k] = lam * dphi.v;
                l_values[k] = -lam.powf(p_exp) * flat_laplacian(phi, rho, nf);
                // d/ds (Lambda phi) = Lambda ((N-2)/2 phi + phi' rho_s)
                axial[k] = -delta * lam * (half * phi.v + phi.d * q.rho_s);
                if let Some(g) = green {
                    let (w, w_s, w_theta) = g.regular_at(q.s, node.theta);
                    // H = chi rho^{N-2} U + (1 - chi) alpha delta^{(N-2)/2}
                    let rn = Jet::var(rho).powf(nf - 2.0);
                    let one_minus = Jet::constant(1.0).sub(chi);
                    let h = chi.mul(rn).mul(u).add(one_minus.scale(amp));
                    let dh = chi.mul(rn).mul(du).add(one_minus.scale(half * amp));
                    value[k] += gamma * w * h.v;
                    z0[k] += gamma * w * dh.v;
                    axial[k] += -delta * gamma * (w_s * h.v + w * h.d * q.rho_s);
                    // L_g(w H) = H L_g w - 2 <grad w, grad H> - w Delta_g H, with
                    // |grad rho|_g^2 = e^{2s} and Delta_g rho = (e^{2s} + (N-2) e^s cos theta) / rho
                    let es = q.s.exp();
                    let lap_rho = (es * es + (nf - 2.0) * es * node.theta.cos()) / rho;
                    let lap_h = h.dd * es * es + h.d * lap_rho;
                    let grad = h.d * (w_s * q.rho_s + w_theta * q.rho_theta);
                    l_values[k] += gamma * (h.v * g.source_density(&q) - 2.0 * grad - w * lap_h);
                }
            }
        }
    }
    Ok(Profile {
        params,
        cutoff,
        value: m.wrap_values(value),
        z0: m.wrap_values(z0),
        axial: m.wrap_values(axial),
        l_values,
    })
}

/// Z^0, ..., Z^N of a profile in the reduced representation: Z^0, the axial Z^1,
/// and zero fields for the directions transverse to the axis, which are odd under the
/// axial symmetry and so orthogonal to every axisymmetric field.
pub fn profile_derivatives(m: &DiscreteManifold, profile: &Profile) -> Vec<Field> {
    let mut out = vec![profile.z0.clone(), profile.axial.clone()];
    out.extend((1..m.dim()).map(|_| m.zeros()));
    out
}

/// chi(d_g) U_delta(d_g), the truncated bubble the profiles approximate.
pub fn truncated_bubble(m: &DiscreteManifold, delta: f64, center_t: f64, cutoff: CutoffSpec) -> Field {
    let dim = m.dim();
    let values = (0..m.len())
        .map(|k| {
            let d = m.axis_distance(center_t, k);
            cutoff.value(d) * bubble_value(dim, delta, d)
        })
        .collect();
    m.wrap_values(values)
}

/// Which residual decomposition a bundle follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualContext {
    /// u0 > 0, several bubbles: pieces I1..I4
    PositiveU0,
    /// u0 = 0: pieces II1..II3
    ZeroU0,
    /// u0 > 0, one bubble in dimension at least 6: pieces III1..III3
    SingleBubble,
}

/// f = L_g u - u^{2*-1} for u = u0 + sum V_i + rho, with its pieces.
#[derive(Debug, Clone)]
pub struct ResidualBundle {
    pub context: ResidualContext,
    pub total: Field,
    /// L_g rho - (2*-1)(u0 + sum V)^{2*-2} rho
    pub linearized: Field,
    /// L_g u0 - u0^{2*-1}, zero up to discretization
    pub u0_defect: Field,
    pub pieces: Vec<(String, Field)>,
    /// L^{2N/(N+2)} norm of every piece
    pub norms: Vec<(String, f64)>,
}

impl ResidualBundle {
    pub fn piece(&self, name: &str) -> Option<&Field> {
        self.pieces.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn norm(&self, name: &str) -> Option<f64> {
        self.norms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Rows (piece, N, delta, norm) for CSV export.
    pub fn write_csv<W: Write>(&self, out: W, dim: usize, delta: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["piece", "N", "delta", "norm"]).map_err(crate::bubble_euclid::csv_err)?;
        for (name, v) in &self.norms {
            w.write_record([name.clone(), dim.to_string(), delta.to_string(), v.to_string()])
                .map_err(crate::bubble_euclid::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decompose the residual of u = u0 + sum V_i + rho into the interaction pieces.
pub fn residual_bundle(
    m: &DiscreteManifold,
    u0: Option<&Field>,
    profiles: &[&Profile],
    rho: &Field,
) -> Result<ResidualBundle> {
    m.check(rho)?;
    let dim = m.dim();
    let p = critical_exponent::<f64>(dim) - 1.0;
    let n = m.len();
    let context = match u0 {
        None => ResidualContext::ZeroU0,
        Some(_) if profiles.len() == 1 && dim >= 6 => ResidualContext::SingleBubble,
        Some(_) => ResidualContext::PositiveU0,
    };
    let base = match u0 {
        Some(f) => {
            m.check(f)?;
            f.values().to_vec()
        }
        None => vec![0.0; n],
    };
    let mut sum_v = vec![0.0; n];
    let mut sum_vp = vec![0.0; n];
    let mut bubble_residual = vec![0.0; n];
    for prof in profiles {
        m.check(&prof.value)?;
        let lv = prof.l_pointwise(m)?;
        for k in 0..n {
            let v = prof.value.values()[k];
            sum_v[k] += v;
            sum_vp[k] += v.powf(p);
            bubble_residual[k] += -lv.values()[k] + v.powf(p);
        }
    }
    let lrho = m.apply_l(rho)?;
    let lu0 = match u0 {
        Some(f) => m.apply_l(f)?.into_values(),
        None => vec![0.0; n],
    };
    let pos = |x: f64| x.max(0.0);
    let mut total = vec![0.0; n];
    let mut linearized = vec![0.0; n];
    let mut u0_defect = vec![0.0; n];
    let mut first = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut third = vec![0.0; n];
    for k in 0..n {
        let r = rho.values()[k];
        let approx = base[k] + sum_v[k];
        let u = approx + r;
        // u is meant to be nonnegative; the power is taken of the positive part
        let up = pos(u).powf(p);
        let ap = pos(approx).powf(p);
        let lin_coef = p * pos(approx).powf(p - 1.0);
        first[k] = up - ap - lin_coef * r;
        second[k] = ap - pos(base[k]).powf(p) - sum_v[k].powf(p);
        third[k] = sum_v[k].powf(p) - sum_vp[k];
        linearized[k] = lrho.values()[k] - lin_coef * r;
        u0_defect[k] = lu0[k] - pos(base[k]).powf(p);
        // L_g u - u^p = L rho + L u0 + sum L V - u^p
        let lv_sum = sum_vp[k] - bubble_residual[k];
        total[k] = lrho.values()[k] + lu0[k] + lv_sum - up;
    }
    let names: Vec<&str> = match context {
        ResidualContext::PositiveU0 => vec!["I1", "I2", "I3", "I4"],
        ResidualContext::ZeroU0 => vec!["II1", "II2", "II3"],
        ResidualContext::SingleBubble => vec!["III1", "III2", "III3"],
    };
    let fields: Vec<Vec<f64>> = match context {
        ResidualContext::PositiveU0 => vec![first, second, third, bubble_residual],
        // with u0 = 0 the second piece vanishes identically
        ResidualContext::ZeroU0 => vec![first, third, bubble_residual],
        ResidualContext::SingleBubble => vec![first, second, bubble_residual],
    };
    let q = 2.0 * dim as f64 / (dim as f64 + 2.0);
    let mut pieces = Vec::new();
    let mut norms = Vec::new();
    for (name, vals) in names.into_iter().zip(fields) {
        let f = m.wrap_values(vals);
        norms.push((name.to_string(), m.lp_norm(&f, q)?));
        pieces.push((name.to_string(), f));
    }
    Ok(ResidualBundle {
        context,
        total: m.wrap_values(total),
        linearized: m.wrap_values(linearized),
        u0_defect: m.wrap_values(u0_defect),
        pieces,
        norms,
    })
}

/// Comparison of -L_g V + V^{2*-1} against its leading expansion for the Green-glued profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionComparison {
    /// max |numeric - leading| / max |leading| over the annulus
    pub deviation: f64,
    /// median of numeric / leading over the annulus
    pub median_ratio: f64,
    /// smallest numeric value on the annulus
    pub min_numeric: f64,
    pub nodes: usize,
}

/// Compare -L_g V + V^{2*-1} with
/// Lambda^{2*-1} alpha gamma A delta^{(N+2)/2} [4N |y|^{N-2}/(delta^2+|y|^2)^{(N+2)/2}
/// + 2(N-2)^2 |y|^{N-4}/(delta^2+|y|^2)^{N/2}] on the annulus delta <= |y| <= r0/4.
pub fn compare_residual_expansion(m: &DiscreteManifold, profile: &Profile, green: &GreenData) -> Result<ExpansionComparison> {
    if profile.params.variant.tag != ProfileTag::GreenGlued {
        return Err(Error::InvalidInput("expansion comparison needs the Green-glued profile".into()));
    }
    if !green.mass.is_finite() {
        return Err(Error::GreenMissing);
    }
    let dim = m.dim();
    let nf = dim as f64;
    let p = critical_exponent::<f64>(dim) - 1.0;
    let delta = profile.params.delta;
    let chart = m.flat_chart(profile.params.center_t)?;
    let lv = profile.l_pointwise(m)?;
    let coef = alpha::<f64>(dim) * green_normalization::<f64>(dim) * green.mass * delta.powf(0.5 * (nf + 2.0));
    let mut pairs = Vec::new();
    for k in 0..m.len() {
        let node = m.node(k);
        let q = chart.point(node.t, node.theta);
        if q.rho < delta || q.rho > 0.25 * profile.cutoff.r0 {
            continue;
        }
        let d2 = delta * delta + q.rho * q.rho;
        let bracket = 4.0 * nf * q.rho.powf(nf - 2.0) / d2.powf(0.5 * (nf + 2.0))
            + 2.0 * (nf - 2.0).powi(2) * q.rho.powf(nf - 4.0) / d2.powf(0.5 * nf);
        let leading = q.lambda.powf(p) * coef * bracket;
        let numeric = -lv.values()[k] + profile.value.values()[k].powf(p);
        pairs.push((numeric, leading));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no nodes in the comparison annulus".into()));
    }
    let max_lead = pairs.iter().fold(0.0f64, |a, &(_, l)| a.max(l.abs()));
    let deviation = pairs.iter().fold(0.0f64, |a, &(x, l)| a.max((x - l).abs())) / max_lead;
    let mut ratios: Vec<f64> = pairs.iter().map(|&(x, l)| x / l).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_numeric = pairs.iter().fold(f64::INFINITY, |a, &(x, _)| a.min(x));
    Ok(ExpansionComparison { deviation, median_ratio: ratios[ratios.len() / 2], min_numeric, nodes: pairs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_manifold::ManifoldSpec;

    #[test]
    fn variant_table() {
        assert_eq!(select_variant(4, true, true).tag, ProfileTag::TruncatedPlusTail);
        assert_eq!(select_variant(4, false, false).tag, ProfileTag::GreenGlued);
        assert_eq!(select_variant(7, true, false).tag, ProfileTag::GreenGlued);
        assert_eq!(select_variant(8, false, true).tag, ProfileTag::ConformalTruncated);
        assert_eq!(select_variant(8, false, false).tag, ProfileTag::GreenGlued);
        assert_eq!(select_variant(12, false, false).tag, ProfileTag::ConformalTruncated);
        assert_eq!(select_variant(6, true, true).tag, ProfileTag::GreenGlued);
    }

    #[test]
    fn cutoff_shape() {
        for s in [3u32, 5] {
            let c = CutoffSpec { r0: 0.8, smoothness: s };
            assert_eq!(c.value(0.2), 1.0);
            assert_eq!(c.value(0.8), 0.0);
            let mut last = 1.0;
            for k in 0..=100 {
                let v = c.value(0.4 + 0.4 * k as f64 / 100.0);
                assert!(v <= last && (0.0..=1.0).contains(&v));
                last = v;
            }
            let h = 1e-6;
            for &x in &[0.45, 0.55, 0.61, 0.77] {
                let d1 = (c.value(x + h) - c.value(x - h)) / (2.0 * h);
                let d2 = (c.d1(x + h) - c.d1(x - h)) / (2.0 * h);
                assert!((c.d1(x) - d1).abs() < 1e-6 && (c.d2(x) - d2).abs() < 1e-5);
            }
        }
        assert!(CutoffSpec { r0: 0.8, smoothness: 4 }.validate().is_err());
    }

    #[test]
    fn jets_match_differences() {
        let (u, du) = bubble_jets(5, 0.3, 0.7);
        let h = 1e-5;
        let f = |r: f64| bubble_value(5, 0.3, r);
        assert!((u.v - f(0.7)).abs() < 1e-14);
        assert!((u.d - (f(0.7 + h) - f(0.7 - h)) / (2.0 * h)).abs() < 1e-8);
        assert!((u.dd - (f(0.7 + h) - 2.0 * f(0.7) + f(0.7 - h)) / (h * h)).abs() < 1e-4);
        let g = |d: f64| bubble_value(5, d, 0.7);
        let fd = (g(0.3 * (1.0 + h)) - g(0.3 * (1.0 - h))) / (2.0 * h);
        assert!((du.v - fd).abs() < 1e-8);
        // the bubble solves -Delta U = U^{2*-1}
        let p = critical_exponent::<f64>(5) - 1.0;
        assert!((flat_laplacian(u, 0.7, 5.0) + u.v.powf(p)).abs() < 1e-12);
    }

    fn product(n_t: usize, n_theta: usize) -> DiscreteManifold {
        let spec = ManifoldSpec::product(1.5, 3, n_t, n_theta).graded(vec![0.0], 0.05, n_theta / 16);
        DiscreteManifold::build(spec).unwrap()
    }

    #[test]
    fn tail_far_field_and_positivity() {
        let m = product(128, 128);
        let cut = CutoffSpec::new(m.spec().default_r0());
        let v = build_profile(&m, select_variant(3, true, true), 0.02, 0.0, cut, None).unwrap();
        let tail = alpha::<f64>(3) * (0.02 / (0.02f64.powi(2) + (0.5 * cut.r0).powi(2))).sqrt();
        for k in 0..m.len() {
            let d = m.axis_distance(0.0, k);
            assert!(v.value.values()[k] >= 0.0);
            if d >= cut.r0 {
                assert!((v.value.values()[k] - tail).abs() < 1e-14);
            }
        }
        assert!(matches!(
            build_profile(&m, select_variant(3, true, true), 0.5, 0.0, cut, None),
            Err(Error::ScaleTooLarge { .. })
        ));
        assert!(matches!(
            build_profile(&m, select_variant(3, true, false), 0.01, 0.0, cut, None),
            Err(Error::GreenMissing)
        ));
    }

    #[test]
    fn green_glued_far_field() {
        let m = product(128, 128);
        let cut = CutoffSpec::new(m.spec().default_r0());
        let g = m.greens_function(0.0, f64::INFINITY).unwrap();
        let delta = 0.01;
        let v = build_profile(&m, select_variant(3, true, false), delta, 0.0, cut, Some(&g)).unwrap();
        let chart = m.flat_chart(0.0).unwrap();
        let gamma = green_normalization::<f64>(3);
        for k in 0..m.len() {
            let node = m.node(k);
            let q = chart.point(node.t, node.theta);
            assert!(v.value.values()[k] > 0.0);
            if q.rho >= cut.r0 {
                // gamma alpha delta^{1/2} G, with G = w beyond the cutoff
                let expect = gamma * alpha::<f64>(3) * delta.sqrt() * g.regular.values()[k];
                assert!((v.value.values()[k] - expect).abs() < 1e-12 * expect, "{k}");
            }
        }
    }

    #[test]
    fn z0_matches_delta_differences() {
        let m = product(64, 64);
        let cut = CutoffSpec::new(m.spec().default_r0());
        let g = m.greens_function(0.0, f64::INFINITY).unwrap();
        let delta = 0.01;
        let h = 1e-5;
        for variant in [select_variant(3, true, true), select_variant(3, true, false), select_variant(8, false, true)] {
            let variant = ProfileVariant { conformal_factor_mode: ConformalMode::ExactLcf, ..variant };
            let build = |d: f64| build_profile(&m, variant, d, 0.0, cut, Some(&g)).unwrap();
            let (plus, minus, mid) = (build(delta * (1.0 + h)), build(delta * (1.0 - h)), build(delta));
            let scale = mid.z0.max_abs();
            for k in 0..m.len() {
                let fd = (plus.value.values()[k] - minus.value.values()[k]) / (2.0 * h);
                assert!((fd - mid.z0.values()[k]).abs() < 1e-6 * scale, "{variant:?} {k}");
            }
        }
    }

    #[test]
    fn axial_derivative_matches_center_differences() {
        let m = DiscreteManifold::build(ManifoldSpec::product(1.5, 3, 96, 64)).unwrap();
        let cut = CutoffSpec::new(m.spec().default_r0());
        let g = m.greens_function(0.0, f64::INFINITY).unwrap();
        let delta = 0.05;
        let h = 1e-5;
        for variant in [select_variant(3, true, true), select_variant(3, true, false)] {
            let build = |c: f64| build_profile(&m, variant, delta, c, cut, Some(&g)).unwrap();
            let (plus, minus, mid) = (build(0.3 + h), build(0.3 - h), build(0.3));
            let scale = mid.axial.max_abs();
            let mut worst: f64 = 0.0;
            for k in 0..m.len() {
                let fd = delta * (plus.value.values()[k] - minus.value.values()[k]) / (2.0 * h);
                worst = worst.max((fd - mid.axial.values()[k]).abs());
            }
            // the Green part goes through an interpolant of the regular part
            assert!(worst < 2e-3 * scale, "{variant:?} {worst} {scale}");
        }
    }

    #[test]
    fn closed_form_operator_matches_assembled() {
        // the assembled operator is a second order approximation of L_g V in H^{-1}
        let mut errs = vec![Vec::new(), Vec::new()];
        for n in [64usize, 128, 256] {
            let spec = ManifoldSpec::product(1.5, 3, n, n).graded(vec![0.0], 0.1, n / 16);
            let m = DiscreteManifold::build(spec).unwrap();
            let cut = CutoffSpec::new(m.spec().default_r0());
            let g = m.greens_function(0.0, f64::INFINITY).unwrap();
            for (slot, variant) in [select_variant(3, true, true), select_variant(3, true, false)].into_iter().enumerate() {
                let v = build_profile(&m, variant, 0.1, 0.0, cut, Some(&g)).unwrap();
                let exact = v.l_load(&m).unwrap();
                let discrete = m.apply_operator(&v.value).unwrap();
                let diff: Vec<f64> = exact.iter().zip(&discrete).map(|(a, b)| a - b).collect();
                errs[slot].push(m.dual_norm_load(&diff).unwrap() / m.h1_norm(&v.value).unwrap());
            }
        }
        for e in &errs {
            assert!(e[0] / e[1] > 3.5 && e[1] / e[2] > 3.5 && e[2] < 1e-2, "{errs:?}");
        }
    }

    #[test]
    fn residual_bundle_identity() {
        let m = product(96, 96);
        let cut = CutoffSpec::new(m.spec().default_r0());
        let u0 = m.constant(0.5f64.sqrt());
        let a = build_profile(&m, select_variant(3, true, true), 0.02, 0.0, cut, None).unwrap();
        let b = build_profile(&m, select_variant(3, true, true), 0.03, 2.0, cut, None).unwrap();
        let rho = m.field_fn(|p| 0.01 * (p.t / 1.5).cos() * p.theta.cos());
        let bundle = residual_bundle(&m, Some(&u0), &[&a, &b], &rho).unwrap();
        assert_eq!(bundle.context, ResidualContext::PositiveU0);
        let largest = bundle.pieces.iter().map(|(_, f)| f.max_abs()).fold(0.0, f64::max);
        for k in 0..m.len() {
            let sum: f64 = bundle.pieces.iter().map(|(_, f)| f.values()[k]).sum();
            let rebuilt = bundle.linearized.values()[k] + bundle.u0_defect.values()[k] - sum;
            assert!((bundle.total.values()[k] - rebuilt).abs() <= 1e-10 * largest, "{k}");
        }
        // no bubbles and rho = 0: the total is the discrete defect of u0
        let none = residual_bundle(&m, Some(&u0), &[], &m.zeros()).unwrap();
        assert!(none.total.max_abs() < 1e-9, "{} {:?}", none.total.max_abs(), none.norms);
        assert!(none.norms.iter().all(|(_, v)| *v < 1e-12));
    }

    #[test]
    fn residual_expansion_sign() {
        let m = DiscreteManifold::build(ManifoldSpec::product(1.0, 3, 128, 128).graded(vec![0.0], 0.02, 10)).unwrap();
        let cut = CutoffSpec::new(m.spec().default_r0());
        let g = m.greens_function(0.0, f64::INFINITY).unwrap();
        let v = build_profile(&m, select_variant(3, true, false), 0.02, 0.0, cut, Some(&g)).unwrap();
        let cmp = compare_residual_expansion(&m, &v, &g).unwrap();
        assert!(cmp.min_numeric > 0.0, "{cmp:?}");
        assert!(cmp.deviation < 0.5, "{cmp:?}");
    }
}
