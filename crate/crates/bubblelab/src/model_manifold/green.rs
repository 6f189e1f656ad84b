//! Green's function of the conformal Laplacian on the product model.
//!
//! G = chi(|y|) Lambda gamma^{-1} |y|^{2-N} + w in the flat chart around the pole,
//! where w solves L_g w = Lambda^{2*-1} (Delta_y of the cut-off kernel off the pole),
//! a smooth load supported where the cutoff varies. The regular part at the pole is w(pole).

use super::{ChartPoint, DiscreteManifold, Field, ManifoldKind};
use crate::bubble_euclid::{critical_exponent, green_normalization};
use crate::bubble_profiles::CutoffSpec;
use crate::error::{Error, Result};

/// Regular part of the Green's function with pole on the axis.
#[derive(Debug, Clone)]
pub struct GreenData {
    pub pole_t: f64,
    pub cutoff: CutoffSpec,
    /// w, so that G = chi Lambda gamma^{-1} |y|^{2-N} + w
    pub regular: Field,
    /// value of the regular part at the pole
    pub mass: f64,
    /// difference against a half-resolution solve
    pub mass_error: f64,
    dim: usize,
    t_nodes: Vec<f64>,
    theta_nodes: Vec<f64>,
    period: f64,
}

/// Four-point Lagrange weights and their derivatives at x.
fn lagrange4(xs: [f64; 4], x: f64) -> ([f64; 4], [f64; 4]) {
    let mut w = [0.0; 4];
    let mut dw = [0.0; 4];
    for a in 0..4 {
        let mut denom = 1.0;
        for b in 0..4 {
            if b != a {
                denom *= xs[a] - xs[b];
            }
        }
        let mut prod = 1.0;
        let mut deriv = 0.0;
        for b in 0..4 {
            if b == a {
                continue;
            }
            let mut term = 1.0;
            for c in 0..4 {
                if c != a && c != b {
                    term *= x - xs[c];
                }
            }
            deriv += term;
            prod *= x - xs[b];
        }
        w[a] = prod / denom;
        dw[a] = deriv / denom;
    }
    (w, dw)
}

impl GreenData {
    /// L_g of the regular part at a chart point: Lambda^{2*-1} Delta_y of the cut-off kernel.
    pub fn source_density(&self, q: &ChartPoint) -> f64 {
        kernel_source(&self.cutoff, self.dim, q)
    }

    /// Regular part and its (t, theta) derivatives at axial offset `s` from the pole.
    ///
    /// Cubic interpolation: periodic in t, even reflection across theta = 0 and theta = pi.
    pub fn regular_at(&self, s: f64, theta: f64) -> (f64, f64, f64) {
        let nt = self.t_nodes.len();
        let nth = self.theta_nodes.len();
        let start = self.t_nodes[0];
        let t = start + (self.pole_t + s - start).rem_euclid(self.period);
        let it = self.t_nodes.partition_point(|&x| x <= t) as isize - 1;
        let t_at = |j: isize| {
            let k = j.rem_euclid(nt as isize) as usize;
            let laps = j.div_euclid(nt as isize) as f64;
            (k, self.t_nodes[k] + laps * self.period)
        };
        let th_at = |j: isize| {
            let n = nth as isize;
            if j < 0 {
                ((-j - 1) as usize, -self.theta_nodes[(-j - 1) as usize])
            } else if j >= n {
                let k = (2 * n - 1 - j) as usize;
                (k, 2.0 * std::f64::consts::PI - self.theta_nodes[k])
            } else {
                (j as usize, self.theta_nodes[j as usize])
            }
        };
        let theta = theta.clamp(0.0, std::f64::consts::PI);
        let jt = self.theta_nodes.partition_point(|&x| x <= theta) as isize - 1;
        let ti: Vec<(usize, f64)> = (it - 1..=it + 2).map(t_at).collect();
        let hi: Vec<(usize, f64)> = (jt - 1..=jt + 2).map(th_at).collect();
        let (wt, dwt) = lagrange4([ti[0].1, ti[1].1, ti[2].1, ti[3].1], t);
        let (wh, dwh) = lagrange4([hi[0].1, hi[1].1, hi[2].1, hi[3].1], theta);
        let values = self.regular.values();
        let (mut v, mut vt, mut vh) = (0.0, 0.0, 0.0);
        for a in 0..4 {
            for b in 0..4 {
                let f = values[ti[a].0 * nth + hi[b].0];
                v += wt[a] * wh[b] * f;
                vt += dwt[a] * wh[b] * f;
                vh += wt[a] * dwh[b] * f;
            }
        }
        (v, vt, vh)
    }
}

pub(super) fn greens_function(m: &DiscreteManifold, t_pole: f64, tol: f64) -> Result<GreenData> {
    let (regular, mass, cutoff) = solve_regular(m, t_pole)?;
    let coarse = m.with_resolution(m.n_t() / 2, m.n_theta() / 2)?;
    let (_, coarse_mass, _) = solve_regular(&coarse, t_pole)?;
    let mass_error = (mass - coarse_mass).abs();
    if !(mass_error <= tol) {
        return Err(Error::NoConvergence(format!(
            "Green's function regular part {mass} differs by {mass_error} from the half-resolution value"
        )));
    }
    Ok(GreenData {
        pole_t: t_pole,
        cutoff,
        regular,
        mass,
        mass_error,
        dim: m.dim(),
        t_nodes: m.grid_t().expect("product model").nodes.clone(),
        theta_nodes: m.grid_theta().nodes.clone(),
        period: m.period(),
    })
}

fn solve_regular(m: &DiscreteManifold, t_pole: f64) -> Result<(Field, f64, CutoffSpec)> {
    if !matches!(m.spec().kind, ManifoldKind::ProductCircleSphere { .. }) {
        return Err(Error::InvalidInput("Green's function is implemented for the product model".into()));
    }
    let dim = m.dim();
    let chart = m.flat_chart(t_pole)?;
    let cutoff = CutoffSpec::new(m.spec().default_r0());
    let source: Vec<f64> =
        m.nodes().zip(m.weights()).map(|(node, w)| w * kernel_source(&cutoff, dim, &chart.point(node.t, node.theta))).collect();
    let w = m.solve_load(&source)?;
    let mass = pole_value(m, &w, t_pole);
    Ok((m.wrap_values(w), mass, cutoff))
}

fn kernel_source(cutoff: &CutoffSpec, dim: usize, q: &ChartPoint) -> f64 {
    if !cutoff.transition(q.rho) {
        return 0.0;
    }
    let n = dim as f64;
    let gamma = green_normalization::<f64>(dim);
    let p = critical_exponent::<f64>(dim) - 1.0;
    let defect = q.rho.powf(1.0 - n) / gamma * ((3.0 - n) * cutoff.d1(q.rho) + q.rho * cutoff.d2(q.rho));
    q.lambda.powf(p) * defect
}

/// Value at the axis point: theta^2 extrapolation from the two innermost shells,
/// then quadratic interpolation in t over the three nearest t nodes.
pub(crate) fn pole_value(m: &DiscreteManifold, values: &[f64], t_pole: f64) -> f64 {
    let th = &m.grid_theta().nodes;
    let (a2, b2) = (th[0] * th[0], th[1] * th[1]);
    let axis = |i: usize| (b2 * values[m.index(i, 0)] - a2 * values[m.index(i, 1)]) / (b2 - a2);
    let Some(grid_t) = m.grid_t() else {
        return axis(0);
    };
    let nt = grid_t.len();
    let period = m.period();
    let c = m.nearest_t_index(t_pole);
    let idx = [(c + nt - 1) % nt, c, (c + 1) % nt];
    let offs: Vec<f64> = idx.iter().map(|&i| crate::quad_engine::wrap(grid_t.nodes[i] - t_pole, period)).collect();
    let mut total = 0.0;
    for a in 0..3 {
        let mut basis = 1.0;
        for b in 0..3 {
            if a != b {
                basis *= offs[b] / (offs[b] - offs[a]);
            }
        }
        total += basis * axis(idx[a]);
    }
    total
}

/// Regular part at the pole from the image sum on the universal cover.
pub fn exact_mass(dim: usize, radius: f64) -> f64 {
    let gamma = green_normalization::<f64>(dim);
    let mut total = 0.0;
    for k in 1..10_000 {
        let term = (2.0 * (std::f64::consts::PI * radius * k as f64).sinh()).powf(2.0 - dim as f64);
        total += term;
        if term < 1e-18 * total {
            break;
        }
    }
    2.0 * total / gamma
}
