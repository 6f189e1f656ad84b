//! Euclidean bubbles U = alpha_N (delta/(delta^2 + |y - sigma|^2))^{(N-2)/2}, their
//! kernel fields Z^k, pairwise interaction strengths, and the radial integrals
//! behind the projection constants.

use crate::error::{Error, Result};
use crate::quad_engine::integrate_adaptive;
use crate::scalar::{gamma_half, sphere_area, Real};
use std::collections::BTreeMap;
use std::io::Write;

/// alpha_N = (N(N-2))^{(N-2)/4}.
pub fn alpha<T: Real>(n: usize) -> T {
    let nf = T::int(n);
    (nf * (nf - T::lit(2.0))).powf((nf - T::lit(2.0)) / T::lit(4.0))
}

/// Critical Sobolev exponent 2* = 2N/(N-2).
pub fn critical_exponent<T: Real>(n: usize) -> T {
    let nf = T::int(n);
    T::lit(2.0) * nf / (nf - T::lit(2.0))
}

/// kappa_N = (N-2)/(4(N-1)), the scalar curvature weight of the conformal Laplacian.
pub fn kappa<T: Real>(n: usize) -> T {
    let nf = T::int(n);
    (nf - T::lit(2.0)) / (T::lit(4.0) * (nf - T::one()))
}

/// gamma_N = (N-2)|S^{N-1}|, so that (gamma_N |y|^{N-2})^{-1} is the Newtonian kernel.
pub fn green_normalization<T: Real>(n: usize) -> T {
    (T::int(n) - T::lit(2.0)) * sphere_area::<T>(n)
}

/// Sharp Sobolev constant S = inf |grad u|_2 / |u|_{2*}, from
/// S^2 = pi N (N-2) (Gamma(N/2)/Gamma(N))^{2/N}.
pub fn sobolev_constant<T: Real>(n: usize) -> T {
    let nf = T::int(n);
    let ratio = gamma_half::<T>(n) / gamma_half::<T>(2 * n);
    (T::pi() * nf * (nf - T::lit(2.0)) * ratio.powf(T::lit(2.0) / nf)).sqrt()
}

/// Euler Beta function B(a/2, b/2) for positive integers a, b.
pub fn beta_half<T: Real>(a: usize, b: usize) -> T {
    gamma_half::<T>(a) * gamma_half::<T>(b) / gamma_half::<T>(a + b)
}

/// A bubble on R^N.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanBubble<T> {
    dim: usize,
    delta: T,
    center: Vec<T>,
}

impl<T: Real> EuclideanBubble<T> {
    pub fn new(dim: usize, delta: T, center: Vec<T>) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidInput(format!("dimension must be at least 3, got {dim}")));
        }
        if !(delta > T::zero()) {
            return Err(Error::InvalidInput(format!("delta must be positive, got {delta:?}")));
        }
        if center.len() != dim {
            return Err(Error::InvalidInput(format!("center has {} entries, expected {dim}", center.len())));
        }
        Ok(Self { dim, delta, center })
    }

    /// Bubble centered at the origin.
    pub fn centered(dim: usize, delta: T) -> Result<Self> {
        Self::new(dim, delta, vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn center(&self) -> &[T] {
        &self.center
    }

    pub fn alpha(&self) -> T {
        alpha(self.dim)
    }

    fn half_power(&self) -> T {
        (T::int(self.dim) - T::lit(2.0)) / T::lit(2.0)
    }

    fn offset_sq(&self, y: &[T]) -> T {
        assert_eq!(y.len(), self.dim, "point dimension mismatch");
        y.iter().zip(&self.center).fold(T::zero(), |s, (&a, &b)| s + (a - b) * (a - b))
    }

    /// alpha_N delta^m (delta^2 + s)^{-m} as c0 (delta^2 + s)^{-m} with m = (N-2)/2.
    fn prefactor(&self) -> T {
        self.alpha() * self.delta.powf(self.half_power())
    }

    /// U_{delta,sigma}(y).
    pub fn eval(&self, y: &[T]) -> T {
        let s = self.offset_sq(y);
        self.prefactor() * (self.delta * self.delta + s).powf(-self.half_power())
    }

    /// Z^0 = delta dU/d delta for k = 0 and Z^k = delta dU/d sigma^k for 1 <= k <= N.
    pub fn eval_zk(&self, k: usize, y: &[T]) -> Result<T> {
        let m = self.half_power();
        let d2 = self.delta * self.delta;
        let s = self.offset_sq(y);
        let u = self.eval(y);
        match k {
            0 => Ok(m * u * (s - d2) / (d2 + s)),
            k if k <= self.dim => {
                let x = y[k - 1] - self.center[k - 1];
                Ok(T::lit(2.0) * m * self.delta * x * u / (d2 + s))
            }
            _ => Err(Error::InvalidInput(format!("Z index {k} outside 0..={}", self.dim))),
        }
    }

    /// Gradient of U.
    pub fn gradient(&self, y: &[T]) -> Vec<T> {
        let m = self.half_power();
        let s = self.offset_sq(y);
        let scale = -T::lit(2.0) * m * self.eval(y) / (self.delta * self.delta + s);
        y.iter().zip(&self.center).map(|(&a, &b)| scale * (a - b)).collect()
    }

    /// Laplacian of U from its exact second derivatives.
    pub fn laplacian(&self, y: &[T]) -> T {
        let m = self.half_power();
        let terms = [(self.prefactor(), m)];
        radial_laplacian(self.dim, self.offset_sq(y), self.delta * self.delta, &terms)
    }

    /// Laplacian of Z^k from its exact second derivatives.
    pub fn laplacian_zk(&self, k: usize, y: &[T]) -> Result<T> {
        let m = self.half_power();
        let d2 = self.delta * self.delta;
        let s = self.offset_sq(y);
        let c0 = self.prefactor();
        match k {
            0 => {
                // m c0 [(d2+s)^{-m} - 2 d2 (d2+s)^{-m-1}]
                let terms = [(m * c0, m), (-T::lit(2.0) * m * c0 * d2, m + T::one())];
                Ok(radial_laplacian(self.dim, s, d2, &terms))
            }
            k if k <= self.dim => {
                // x_k h(s) with h = 2 m delta c0 (d2+s)^{-m-1}
                let c = T::lit(2.0) * m * self.delta * c0;
                let a = m + T::one();
                let base = d2 + s;
                let h1 = -a * c * base.powf(-a - T::one());
                let h2 = a * (a + T::one()) * c * base.powf(-a - T::lit(2.0));
                let x = y[k - 1] - self.center[k - 1];
                Ok(x * (T::lit(4.0) * s * h2 + T::lit(2.0) * T::int(self.dim + 2) * h1))
            }
            _ => Err(Error::InvalidInput(format!("Z index {k} outside 0..={}", self.dim))),
        }
    }
}

// Laplacian in R^n of g(|x|^2) with g(s) = sum_i c_i (b + s)^{-a_i}: 4 s g'' + 2 n g'.
fn radial_laplacian<T: Real>(n: usize, s: T, b: T, terms: &[(T, T)]) -> T {
    let base = b + s;
    let mut g1 = T::zero();
    let mut g2 = T::zero();
    for &(c, a) in terms {
        g1 = g1 - a * c * base.powf(-a - T::one());
        g2 = g2 + a * (a + T::one()) * c * base.powf(-a - T::lit(2.0));
    }
    T::lit(4.0) * s * g2 + T::lit(2.0) * T::int(n) * g1
}

/// Scale and center of a bubble; `center` has one entry per coordinate used
/// (N for Euclidean bubbles, the axial coordinate for manifold bubbles).
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleParams<T> {
    pub delta: T,
    pub center: Vec<T>,
}

/// Which term realizes the maximum in R_ij.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichMax {
    DeltaRatioIj,
    DeltaRatioJi,
    Distance,
}

/// Interaction strength q_ij and its companion scale R_ij.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionPair<T> {
    pub q: T,
    pub r_scale: T,
    pub which_max: WhichMax,
}

/// q_ij = [d_i/d_j + d_j/d_i + dist^2/(d_i d_j)]^{-(N-2)/2} and
/// R_ij = max{sqrt(d_i/d_j), sqrt(d_j/d_i), dist/sqrt(d_i d_j)}.
pub fn interaction<T: Real>(dim: usize, bi: &BubbleParams<T>, bj: &BubbleParams<T>, dist: T) -> InteractionPair<T> {
    let (di, dj) = (bi.delta, bj.delta);
    let m = (T::int(dim) - T::lit(2.0)) / T::lit(2.0);
    let sum = di / dj + dj / di + dist * dist / (di * dj);
    let q = sum.powf(-m);
    let candidates = [
        ((di / dj).sqrt(), WhichMax::DeltaRatioIj),
        ((dj / di).sqrt(), WhichMax::DeltaRatioJi),
        (dist / (di * dj).sqrt(), WhichMax::Distance),
    ];
    let (r_scale, which_max) = candidates
        .iter()
        .copied()
        .fold(candidates[0], |best, c| if c.0 > best.0 { c } else { best });
    InteractionPair { q, r_scale, which_max }
}

/// Maximum interaction over all pairs, Q = max_{i != j} q_ij.
pub fn max_interaction<T: Real>(dim: usize, params: &[BubbleParams<T>], dist: impl Fn(usize, usize) -> T) -> T {
    let mut q = T::zero();
    for i in 0..params.len() {
        for j in (i + 1)..params.len() {
            q = q.max(interaction(dim, &params[i], &params[j], dist(i, j)).q);
        }
    }
    q
}

/// Radial integrals of the bubble calculus, each with its quadrature error.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub dim: usize,
    pub entries: BTreeMap<String, (f64, f64)>,
}

/// int_lo^hi r^a g(r^2) dr, computed as (1/2) int u^{(a-1)/2} g(u) du.
fn r2_moment<G: Fn(f64) -> f64>(a: f64, g: G, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    let e = 0.5 * (a - 1.0);
    let q = integrate_adaptive(|u: f64| 0.5 * u.powf(e) * g(u), lo * lo, hi * hi, tol)?;
    Ok((q.value, q.abs_error))
}

/// Evaluate every radial integral used by the projection constants for dimension `n`.
///
/// Entries (all dimensionless, r in [0, inf) unless stated):
/// `critical_power_radial` r^{N-1}(1+r^2)^{-N};
/// `gradient_energy_radial` r^{N+1}(1+r^2)^{-N};
/// `subcritical_power_radial` r^{N-1}(1+r^2)^{-(N+2)/2};
/// `case2_inner` / `case2_outer` r^{N-1}(r^2-1)(1+r^2)^{-(N+4)/2} on [0,1] / [1,inf);
/// `b_first` r^{2N-3}(r^2-1)(1+r^2)^{-N-1}; `b_second` r^{2N-5}(r^2-1)(1+r^2)^{-N};
/// `c_integral` r^{N+1}(r^2-1)(1+r^2)^{1-N} for N >= 7;
/// `d_integral` r^{N+1}[(2N^2-7N+8)r^2+2(N-2)^2](r^2-1)(1+r^2)^{-N-1} for N >= 7;
/// `d6_integral` r^7(7r^2+4)(r^2-1)(1+r^2)^{-7} for N = 6.
pub fn moment_table(n: usize, tol: f64) -> Result<MomentTable> {
    if !(3..=14).contains(&n) {
        return Err(Error::InvalidInput(format!("moment table supports 3 <= N <= 14, got {n}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let nf = n as f64;
    let inf = f64::INFINITY;
    let mut entries = BTreeMap::new();
    let mut put = |name: &str, r: (f64, f64)| {
        entries.insert(name.to_string(), r);
    };
    put("critical_power_radial", r2_moment(nf - 1.0, |u| (1.0 + u).powf(-nf), 0.0, inf, tol)?);
    put("gradient_energy_radial", r2_moment(nf + 1.0, |u| (1.0 + u).powf(-nf), 0.0, inf, tol)?);
    put(
        "subcritical_power_radial",
        r2_moment(nf - 1.0, |u| (1.0 + u).powf(-0.5 * (nf + 2.0)), 0.0, inf, tol)?,
    );
    let case2 = |u: f64| (u - 1.0) * (1.0 + u).powf(-0.5 * (nf + 4.0));
    put("case2_inner", r2_moment(nf - 1.0, case2, 0.0, 1.0, tol)?);
    put("case2_outer", r2_moment(nf - 1.0, case2, 1.0, inf, tol)?);
    put(
        "b_first",
        r2_moment(2.0 * nf - 3.0, |u| (u - 1.0) * (1.0 + u).powf(-nf - 1.0), 0.0, inf, tol)?,
    );
    put(
        "b_second",
        r2_moment(2.0 * nf - 5.0, |u| (u - 1.0) * (1.0 + u).powf(-nf), 0.0, inf, tol)?,
    );
    if n >= 7 {
        put(
            "c_integral",
            r2_moment(nf + 1.0, |u| (u - 1.0) * (1.0 + u).powf(1.0 - nf), 0.0, inf, tol)?,
        );
        let (a, b) = d_bracket(n);
        put(
            "d_integral",
            r2_moment(nf + 1.0, |u| (a * u + b) * (u - 1.0) * (1.0 + u).powf(-nf - 1.0), 0.0, inf, tol)?,
        );
    }
    if n == 6 {
        put(
            "d6_integral",
            r2_moment(7.0, |u| (7.0 * u + 4.0) * (u - 1.0) * (1.0 + u).powi(-7), 0.0, inf, tol)?,
        );
    }
    if let Some((name, (_, err))) = entries.iter().find(|(_, (_, e))| *e > tol) {
        return Err(Error::InvalidInput(format!("entry {name} error {err:e} above tolerance {tol:e}")));
    }
    Ok(MomentTable { dim: n, entries })
}

fn d_bracket(n: usize) -> (f64, f64) {
    let nf = n as f64;
    (2.0 * nf * nf - 7.0 * nf + 8.0, 2.0 * (nf - 2.0) * (nf - 2.0))
}

impl MomentTable {
    /// Value of a named entry.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|e| e.0)
    }

    /// Quadrature error of a named entry.
    pub fn error(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|e| e.1)
    }

    fn need(&self, name: &str) -> f64 {
        self.value(name).unwrap_or_else(|| panic!("moment {name} not tabulated for N = {}", self.dim))
    }

    /// int_{R^N} U^{2*}.
    pub fn critical_power(&self) -> f64 {
        let n = self.dim;
        alpha::<f64>(n).powf(critical_exponent::<f64>(n)) * sphere_area::<f64>(n) * self.need("critical_power_radial")
    }

    /// int_{R^N} |grad U|^2.
    pub fn gradient_energy(&self) -> f64 {
        let n = self.dim;
        let nf = n as f64;
        alpha::<f64>(n).powi(2) * (nf - 2.0).powi(2) * sphere_area::<f64>(n) * self.need("gradient_energy_radial")
    }

    /// int_{R^N} U^{2*-1}.
    pub fn subcritical_power(&self) -> f64 {
        let n = self.dim;
        alpha::<f64>(n).powf(critical_exponent::<f64>(n) - 1.0)
            * sphere_area::<f64>(n)
            * self.need("subcritical_power_radial")
    }

    /// Sobolev constant from the energy, S = (int |grad U|^2)^{1/N}.
    pub fn sobolev_constant(&self) -> f64 {
        self.gradient_energy().powf(1.0 / self.dim as f64)
    }

    /// int_{B_1} U^{2*-2} Z^0 and int_{B_1^c} U^{2*-2} Z^0 for the unit bubble.
    pub fn z0_split(&self) -> (f64, f64) {
        let n = self.dim;
        let scale = 0.5 * (n as f64 - 2.0) * alpha::<f64>(n).powf(critical_exponent::<f64>(n) - 1.0) * sphere_area::<f64>(n);
        (scale * self.need("case2_inner"), scale * self.need("case2_outer"))
    }

    /// 2N(N-2) b_first + (N-2)^3 b_second, which collapses to (N-2)^2/2.
    pub fn b_bracket(&self) -> (f64, f64) {
        let nf = self.dim as f64;
        let c1 = 2.0 * nf * (nf - 2.0);
        let c2 = (nf - 2.0).powi(3);
        (
            c1 * self.need("b_first") + c2 * self.need("b_second"),
            c1 * self.error("b_first").unwrap_or(0.0) + c2 * self.error("b_second").unwrap_or(0.0),
        )
    }

    /// Write rows (name, N, value, abs_error).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "N", "value", "abs_error"]).map_err(csv_err)?;
        for (name, (v, e)) in &self.entries {
            w.write_record([name.clone(), self.dim.to_string(), format!("{v:.17e}"), format!("{e:.3e}")])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Closed forms of the projection constants.
pub mod constants {
    use super::*;

    /// a_N = alpha_N^{2*-1} |S^{N-1}| / 2*.
    pub fn a_constant(n: usize) -> f64 {
        alpha::<f64>(n).powf(critical_exponent::<f64>(n) - 1.0) * sphere_area::<f64>(n) / critical_exponent::<f64>(n)
    }

    /// b_N = (N-2)^2/2 alpha_N^2 gamma_N |S^{N-1}|.
    pub fn b_constant(n: usize) -> f64 {
        let nf = n as f64;
        0.5 * (nf - 2.0).powi(2) * alpha::<f64>(n).powi(2) * green_normalization::<f64>(n) * sphere_area::<f64>(n)
    }

    /// Prefactor (N-2) alpha_N^2 kappa_N |S^{N-1}| / (24 N) shared by c_N.
    pub fn c_prefactor(n: usize) -> f64 {
        let nf = n as f64;
        (nf - 2.0) * alpha::<f64>(n).powi(2) * kappa::<f64>(n) * sphere_area::<f64>(n) / (24.0 * nf)
    }

    /// int_0^inf r^{N+1}(r^2-1)/(1+r^2)^{N-1} dr by Beta functions (N >= 7).
    pub fn c_integral(n: usize) -> f64 {
        assert!(n >= 7, "c integral diverges for N < 7");
        0.5 * (beta_half::<f64>(n + 4, n - 6) - beta_half::<f64>(n + 2, n - 4))
    }

    /// c_N for N >= 7.
    pub fn c_constant(n: usize) -> f64 {
        c_prefactor(n) * c_integral(n)
    }

    /// int_0^inf r^{N+1}[A r^2 + B](r^2-1)/(1+r^2)^{N+1} dr by Beta functions (N >= 7).
    pub fn d_integral(n: usize) -> f64 {
        assert!(n >= 7, "d integral is defined for N >= 7");
        let (a, b) = d_bracket(n);
        // (A u + B)(u - 1) = A u^2 + (B - A) u - B against u^{N/2} (1+u)^{-N-1} du / 2
        let m = |s2: usize| beta_half::<f64>(n + s2 + 2, n - s2);
        0.5 * (a * m(4) + (b - a) * m(2) - b * m(0))
    }

    /// d_N = (N-2) alpha_N^2 kappa_N |S^{N-1}| / (24 N (N-6)) times the d integral (N >= 7).
    pub fn d_constant(n: usize) -> f64 {
        let nf = n as f64;
        c_prefactor(n) / (nf - 6.0) * d_integral(n)
    }

    /// d_6 = 16/5 |S^5|.
    pub fn d6_constant() -> f64 {
        16.0 / 5.0 * sphere_area::<f64>(6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn peak_values() {
        let b4 = EuclideanBubble::<f64>::centered(4, 1.0).unwrap();
        assert!((b4.eval(&[0.0; 4]) - 2.0 * SQRT_2).abs() < 1e-14);
        let b6 = EuclideanBubble::<f64>::centered(6, 1.0).unwrap();
        assert!((b6.eval(&[0.0; 6]) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn z0_at_center_matches_central_difference() {
        let y = [0.0; 4];
        let h = 1e-6;
        let up = EuclideanBubble::<f64>::centered(4, 1.0 + h).unwrap().eval(&y);
        let down = EuclideanBubble::<f64>::centered(4, 1.0 - h).unwrap().eval(&y);
        let fd = (up - down) / (2.0 * h);
        let z0 = EuclideanBubble::<f64>::centered(4, 1.0).unwrap().eval_zk(0, &y).unwrap();
        assert!((z0 - fd).abs() < 1e-8);
        assert!((z0 + 2.0 * SQRT_2).abs() < 1e-13);
    }

    #[test]
    fn z_fields_vanish_where_expected() {
        let b = EuclideanBubble::<f64>::new(3, 0.7, vec![0.1, -0.2, 0.3]).unwrap();
        for k in 1..=3 {
            assert_eq!(b.eval_zk(k, &[0.1, -0.2, 0.3]).unwrap(), 0.0);
        }
        let unit = EuclideanBubble::<f64>::centered(3, 1.0).unwrap();
        assert!(unit.eval_zk(0, &[0.6, 0.8, 0.0]).unwrap().abs() < 1e-15);
        assert!(unit.eval_zk(4, &[0.0; 3]).is_err());
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(EuclideanBubble::<f64>::centered(2, 1.0).is_err());
        assert!(EuclideanBubble::<f64>::centered(3, 0.0).is_err());
        assert!(EuclideanBubble::<f64>::new(3, 1.0, vec![0.0; 2]).is_err());
    }

    #[test]
    fn single_precision_bubble() {
        let b = EuclideanBubble::<f32>::centered(6, 1.0).unwrap();
        assert!((b.eval(&[0.0f32; 6]) - 24.0).abs() < 1e-4);
    }

    #[test]
    fn interaction_trivial_cases() {
        let p = BubbleParams { delta: 0.3f64, center: vec![0.0] };
        assert!((interaction(4, &p, &p, 0.0).q - 0.5).abs() < 1e-15);
        assert!((interaction(3, &p, &p, 0.0).q - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn interaction_matches_r_scale_within_factor() {
        let bi = BubbleParams { delta: 1e-2, center: vec![0.0] };
        let bj = BubbleParams { delta: 1e-4, center: vec![0.3] };
        let pair = interaction(5, &bi, &bj, 0.3);
        let direct = (1e-2 / 1e-4 + 1e-4 / 1e-2 + 0.09 / 1e-6f64).powf(-1.5);
        assert!((pair.q - direct).abs() < 1e-12 * direct);
        let envelope = pair.r_scale.powf(-3.0);
        assert!(pair.q <= envelope && pair.q >= envelope * 3f64.powf(-1.5));
        assert_eq!(pair.which_max, WhichMax::Distance);
        let sym = interaction(5, &bj, &bi, 0.3);
        assert_eq!(pair.q, sym.q);
    }

    #[test]
    fn sobolev_constant_against_energy() {
        for n in 3..=8 {
            let t = moment_table(n, 1e-11).unwrap();
            let s = sobolev_constant::<f64>(n);
            assert!((t.sobolev_constant() - s).abs() < 1e-9 * s, "N={n}");
        }
    }

    #[test]
    fn case_two_radial_values() {
        let t3 = moment_table(3, 1e-12).unwrap();
        assert!((t3.value("case2_outer").unwrap() - (2.0 + SQRT_2) / 30.0).abs() < 1e-11);
        assert!((t3.value("case2_inner").unwrap() + SQRT_2 / 30.0).abs() < 1e-11);
        let t4 = moment_table(4, 1e-12).unwrap();
        assert!((t4.value("case2_outer").unwrap() - 5.0 / 48.0).abs() < 1e-11);
        assert!((t4.value("case2_inner").unwrap() + 1.0 / 48.0).abs() < 1e-11);
    }

    #[test]
    fn c8_is_one_fifteenth() {
        assert!((constants::c_integral(8) - 1.0 / 15.0).abs() < 1e-15);
        let t = moment_table(8, 1e-12).unwrap();
        assert!((t.value("c_integral").unwrap() - 1.0 / 15.0).abs() < 1e-11);
    }

    #[test]
    fn d6_integral_is_half() {
        let t = moment_table(6, 1e-12).unwrap();
        assert!((t.value("d6_integral").unwrap() - 0.5).abs() < 1e-11);
    }

    #[test]
    fn moment_csv_layout() {
        let t = moment_table(3, 1e-10).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,N,value,abs_error\n"));
        assert_eq!(text.lines().count(), 1 + t.entries.len());
    }

    #[test]
    fn moment_table_rejects_bad_dimension() {
        assert!(moment_table(2, 1e-9).is_err());
        assert!(moment_table(15, 1e-9).is_err());
    }

    #[test]
    fn green_normalization_three() {
        assert!((green_normalization::<f64>(3) - 4.0 * PI).abs() < 1e-13);
    }

    fn random_point(n: usize) -> impl Strategy<Value = (usize, f64, Vec<f64>, Vec<f64>)> {
        (Just(n), 0.2f64..5.0, prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n))
    }

    fn any_point() -> impl Strategy<Value = (usize, f64, Vec<f64>, Vec<f64>)> {
        (3usize..=10).prop_flat_map(random_point)
    }

    proptest! {
        #[test]
        fn bubble_solves_yamabe((n, delta, center, y) in any_point()) {
            let b = EuclideanBubble::new(n, delta, center).unwrap();
            let p = critical_exponent::<f64>(n) - 1.0;
            let u = b.eval(&y);
            prop_assert!((b.laplacian(&y) + u.powf(p)).abs() <= 1e-10 * u.powf(p));
        }

        #[test]
        fn z_fields_solve_linearized((n, delta, center, y) in any_point(), k in 0usize..=10) {
            let k = k.min(n);
            let b = EuclideanBubble::new(n, delta, center).unwrap();
            let p = critical_exponent::<f64>(n) - 1.0;
            let u = b.eval(&y);
            let z = b.eval_zk(k, &y).unwrap();
            let res = b.laplacian_zk(k, &y).unwrap() + p * u.powf(p - 1.0) * z;
            prop_assert!(res.abs() <= 1e-10 * u.powf(p));
        }

        #[test]
        fn scaling_identity((n, delta, center, y) in any_point()) {
            let b = EuclideanBubble::new(n, delta, center.clone()).unwrap();
            let unit = EuclideanBubble::centered(n, 1.0).unwrap();
            let z: Vec<f64> = y.iter().zip(&center).map(|(a, c)| (a - c) / delta).collect();
            let expected = delta.powf(-(n as f64 - 2.0) / 2.0) * unit.eval(&z);
            prop_assert!((b.eval(&y) - expected).abs() <= 1e-12 * expected);
        }

        #[test]
        fn radially_decreasing(n in 3usize..=10, delta in 0.2f64..5.0, r1 in 0.0f64..3.0, r2 in 0.0f64..3.0) {
            let b = EuclideanBubble::centered(n, delta).unwrap();
            let mut y1 = vec![0.0; n];
            let mut y2 = vec![0.0; n];
            y1[0] = r1.min(r2);
            y2[n - 1] = r1.max(r2);
            prop_assert!(b.eval(&y1) >= b.eval(&y2));
            prop_assert!(b.eval(&y2) > 0.0);
        }

        #[test]
        fn z_fields_match_richardson_differences((n, delta, center, y) in any_point(), k in 0usize..=10) {
            let k = k.min(n);
            let b = EuclideanBubble::new(n, delta, center.clone()).unwrap();
            let shifted = |h: f64| {
                if k == 0 {
                    EuclideanBubble::new(n, delta * (1.0 + h), center.clone()).unwrap().eval(&y)
                } else {
                    let mut c = center.clone();
                    c[k - 1] += delta * h;
                    EuclideanBubble::new(n, delta, c).unwrap().eval(&y)
                }
            };
            let central = |h: f64| (shifted(h) - shifted(-h)) / (2.0 * h);
            let fd = (4.0 * central(1e-5) - central(2e-5)) / 3.0;
            let z = b.eval_zk(k, &y).unwrap();
            prop_assert!((z - fd).abs() <= 1e-6 * (b.eval(&y) + z.abs()));
        }

        #[test]
        fn interaction_is_symmetric(n in 3usize..=8, a in -6.0f64..0.0, b in -6.0f64..0.0, d in 0.0f64..2.0) {
            let bi = BubbleParams { delta: 10f64.powf(a), center: vec![0.0] };
            let bj = BubbleParams { delta: 10f64.powf(b), center: vec![d] };
            let x = interaction(n, &bi, &bj, d);
            let y = interaction(n, &bj, &bi, d);
            prop_assert_eq!(x.q, y.q);
            prop_assert_eq!(x.r_scale, y.r_scale);
            prop_assert!(x.q > 0.0 && x.q <= 1.0 && x.r_scale >= 1.0);
            let m = (n as f64 - 2.0) / 2.0;
            let env = x.r_scale.powf(-2.0 * m);
            prop_assert!(x.q <= env * (1.0 + 1e-12) && x.q >= env * 3f64.powf(-m) * (1.0 - 1e-12));
        }
    }
}
