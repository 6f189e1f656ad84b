//! Weighted spectrum around a positive solution u0, the coercivity constant on the
//! orthogonal complement of the bubble and low-mode directions, and the
//! non-degeneracy scan of the product model in its radius.

use crate::bubble_euclid::critical_exponent;
use crate::bubble_profiles::Profile;
use crate::error::{Error, Result};
use crate::linalg::{axpy, condition_estimate, scale, PencilIteration};
use crate::model_manifold::{DiscreteManifold, Field, ManifoldSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Constraint sets whose H^1 Gram matrix exceeds this condition number are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e8;

/// Residual tolerance of the eigen-iterations, relative to the eigenvalue.
pub const EIG_TOL: f64 = 1e-9;

/// Solutions of L_g psi = mu u0^{2*-2} psi, normalized by int u0^{2*-2} psi_l psi_m = delta_lm.
#[derive(Debug, Clone)]
pub struct WeightedSpectrum {
    /// ascending
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<Field>,
    /// number of eigenvalues below 2*-1
    pub below_critical: usize,
}

fn start_block(n: usize, block: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..block)
        .map(|b| (0..n).map(|_| rng.random::<f64>() - 0.5 + if b == 0 { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// The first `count` weighted eigenpairs.
pub fn weighted_eigs(m: &DiscreteManifold, u0: &Field, count: usize) -> Result<WeightedSpectrum> {
    let p = critical_exponent::<f64>(m.dim());
    if u0.values().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("weighted spectrum needs u0 > 0".into()));
    }
    if count == 0 || count > m.len() / 4 {
        return Err(Error::InvalidInput(format!("cannot compute {count} eigenpairs on {} nodes", m.len())));
    }
    let weight = u0.map(|v| v.powf(p - 2.0));
    let b = m.load(&weight)?;
    let block = count + 4.max(count / 2);
    let iter = PencilIteration { a: m.operator(), b: &b, want: count, block, tol: EIG_TOL, max_sweeps: 2000 };
    let (lambdas, vectors) = iter.run(start_block(m.len(), block, 0x5eed), |v| {
        let load: Vec<f64> = v.iter().zip(&b).map(|(x, w)| x * w).collect();
        m.solve_load(&load).expect("factorization available")
    })?;
    let mut eigenvalues = Vec::with_capacity(count);
    let mut eigenfields = Vec::with_capacity(count);
    for (lambda, mut v) in lambdas.into_iter().zip(vectors) {
        // A-normalized, so int u0^{2*-2} v^2 = lambda
        let scale = 1.0 / lambda.sqrt();
        let mass: f64 = v.iter().zip(&b).map(|(x, w)| x * w).sum();
        let sign = if mass.abs() > 1e-8 {
            mass.signum()
        } else {
            let peak = v.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            peak.signum()
        };
        v.iter_mut().for_each(|x| *x *= sign * scale);
        eigenvalues.push(1.0 / lambda);
        eigenfields.push(m.field(v)?);
    }
    let below_critical = eigenvalues.iter().filter(|&&mu| mu < p - 1.0).count();
    Ok(WeightedSpectrum { eigenvalues, eigenfields, below_critical })
}

/// Weighted spectrum with enough pairs to certify the count below 2*-1 (L + 5 pairs).
pub fn weighted_spectrum_certified(m: &DiscreteManifold, u0: &Field) -> Result<WeightedSpectrum> {
    let p = critical_exponent::<f64>(m.dim());
    let mut count = 6;
    loop {
        let spec = weighted_eigs(m, u0, count)?;
        if spec.below_critical + 5 <= count {
            return Ok(spec);
        }
        count = spec.below_critical + 5;
        if *spec.eigenvalues.last().unwrap() >= p - 1.0 {
            return weighted_eigs(m, u0, count);
        }
    }
}

/// H^1-orthogonal projector onto the complement of a constraint set.
pub struct Projector {
    /// normalized constraints
    basis: Vec<Vec<f64>>,
    /// A applied to each constraint
    applied: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    pub condition: f64,
}

impl Projector {
    pub fn new(m: &DiscreteManifold, constraints: &[&Field]) -> Result<Self> {
        let mut basis = Vec::with_capacity(constraints.len());
        let mut applied = Vec::with_capacity(constraints.len());
        for c in constraints {
            let norm = m.h1_norm(c)?;
            if !(norm > 0.0) {
                return Err(Error::RankDeficient(f64::INFINITY));
            }
            let v: Vec<f64> = c.values().iter().map(|x| x / norm).collect();
            applied.push(m.operator().apply(&v));
            basis.push(v);
        }
        let k = basis.len();
        let gram = DMatrix::from_fn(k, k, |i, j| crate::linalg::dot(&basis[i], &applied[j]));
        let condition = if k == 0 { 1.0 } else { condition_estimate(&gram) };
        if !(condition <= MAX_GRAM_CONDITION) {
            return Err(Error::RankDeficient(condition));
        }
        Ok(Self { basis, applied, gram, condition })
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// x - C G^{-1} C^T A x
    pub fn apply(&self, x: &mut [f64]) {
        if self.basis.is_empty() {
            return;
        }
        let rhs = DVector::from_iterator(self.len(), self.applied.iter().map(|a| crate::linalg::dot(a, x)));
        let coef = self.gram.clone().lu().solve(&rhs).expect("checked condition");
        for (c, b) in coef.iter().zip(&self.basis) {
            axpy(-c, b, x);
        }
    }

    /// Largest |<x, c>_{H^1}| / |x|_{H^1} over the normalized constraints.
    pub fn max_overlap(&self, m: &DiscreteManifold, x: &[f64]) -> f64 {
        let norm = m.operator().form(x, x).max(0.0).sqrt();
        self.applied.iter().map(|a| crate::linalg::dot(a, x).abs()).fold(0.0, f64::max) / norm.max(1e-300)
    }
}

/// Largest value of (2*-1) int w^{2*-2} rho^2 / |rho|^2_{H^1} over rho H^1-orthogonal to
/// `constraints`, where w is the base field.
pub fn max_weighted_quotient(m: &DiscreteManifold, base: &Field, constraints: &[&Field]) -> Result<f64> {
    top_weighted_mode(m, base, constraints, 1e-6).map(|(v, _)| v)
}

/// Maximizer of the weighted quotient: the lowest mode of L_g - (2*-1) w^{2*-2} in the
/// H^1 geometry, restricted to the complement of `constraints`. Unit H^1 norm.
pub fn top_weighted_mode(m: &DiscreteManifold, base: &Field, constraints: &[&Field], tol: f64) -> Result<(f64, Field)> {
    let p = critical_exponent::<f64>(m.dim());
    let weight = base.map(|v| (p - 1.0) * v.max(0.0).powf(p - 2.0));
    let b = m.load(&weight)?;
    let projector = Projector::new(m, constraints)?;
    let block = 6;
    let mut start = start_block(m.len(), block, 0xc0e5);
    for v in start.iter_mut() {
        projector.apply(v);
    }
    let iter = PencilIteration { a: m.operator(), b: &b, want: 1, block, tol, max_sweeps: 3000 };
    let (vals, mut vecs) = iter.run(start, |v| {
        let load: Vec<f64> = v.iter().zip(&b).map(|(x, w)| x * w).collect();
        let mut y = m.solve_load(&load).expect("factorization available");
        projector.apply(&mut y);
        y
    })?;
    let mut mode = vecs.swap_remove(0);
    // sign: positive where the weight is largest
    let k = (0..mode.len()).max_by(|&i, &j| b[i].total_cmp(&b[j])).unwrap_or(0);
    if mode[k] < 0.0 {
        scale(-1.0, &mut mode);
    }
    Ok((vals[0], m.field(mode)?))
}

/// Base field u0 + sum V_i.
pub fn profile_sum(m: &DiscreteManifold, u0: Option<&Field>, profiles: &[&Profile]) -> Result<Field> {
    let mut base = match u0 {
        Some(f) => f.clone(),
        None => m.zeros(),
    };
    for prof in profiles {
        base = base.plus_scaled(1.0, &prof.value)?;
    }
    Ok(base)
}

/// Estimate of the coercivity constant: the weighted quotient maximized over the
/// complement of V_i, Z^k_i and (when u0 > 0) psi_1..psi_L.
pub fn coercivity_gap(
    m: &DiscreteManifold,
    u0: Option<&Field>,
    profiles: &[&Profile],
    spectrum: Option<&WeightedSpectrum>,
) -> Result<f64> {
    let base = profile_sum(m, u0, profiles)?;
    let mut constraints: Vec<&Field> = Vec::new();
    for prof in profiles {
        constraints.extend([&prof.value, &prof.z0, &prof.axial]);
    }
    let owned;
    if let Some(u0) = u0 {
        let spec = match spectrum {
            Some(s) => s,
            None => {
                owned = weighted_spectrum_certified(m, u0)?;
                &owned
            }
        };
        constraints.extend(spec.eigenfields.iter().take(spec.below_critical));
    }
    max_weighted_quotient(m, &base, &constraints)
}

/// The same quotient with no constraints.
pub fn unconstrained_gap(m: &DiscreteManifold, u0: Option<&Field>, profiles: &[&Profile]) -> Result<f64> {
    let base = profile_sum(m, u0, profiles)?;
    max_weighted_quotient(m, &base, &[])
}

/// Eigenvalue m^2/r^2 + l(l+N-2) - (N-2) of L_g - (2*-1)u0^{2*-2} on S^1(r) x S^{N-1}
/// for the circle frequency `freq` and spherical degree `degree`.
pub fn product_linearized_eigenvalue(dim: usize, radius: f64, freq: u32, degree: u32) -> f64 {
    let n = dim as f64;
    let (k, l) = (freq as f64, degree as f64);
    k * k / (radius * radius) + l * (l + n - 2.0) - (n - 2.0)
}

/// Closed-form eigenvalue of smallest magnitude over all modes.
pub fn product_smallest_eigenvalue(dim: usize, radius: f64) -> f64 {
    let mut best = f64::INFINITY;
    for degree in 0..4 {
        for freq in 0..(4.0 * radius + 8.0) as u32 {
            let v = product_linearized_eigenvalue(dim, radius, freq, degree);
            if v.abs() < best.abs() {
                best = v;
            }
        }
    }
    best
}

/// One radius of the non-degeneracy scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub radius: f64,
    /// eigenvalue of L_g - (2*-1)u0^{2*-2} of smallest magnitude, signed
    pub smallest: f64,
    /// weighted eigenvalues below 2*-1
    pub below_critical: usize,
}

/// Smallest-magnitude eigenvalue of the linearized operator at the constant solution,
/// for each radius.
pub fn nondegeneracy_scan(dim: usize, radii: &[f64], n_t: usize, n_theta: usize) -> Result<Vec<ScanPoint>> {
    if dim < 3 {
        return Err(Error::InvalidInput("dimension must be at least 3".into()));
    }
    let p = critical_exponent::<f64>(dim);
    radii
        .iter()
        .map(|&radius| {
            if !(radius > 0.0) {
                return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
            }
            let m = DiscreteManifold::build(ManifoldSpec::product(radius, dim, n_t, n_theta))?;
            let u0 = constant_solution(&m);
            let shift = m.constant((p - 1.0) * u0.values()[0].powf(p - 2.0));
            let (smallest, _) = m.smallest_shifted_eigenvalue(&shift)?;
            let below_critical = weighted_spectrum_certified(&m, &u0)?.below_critical;
            Ok(ScanPoint { radius, smallest, below_critical })
        })
        .collect()
}

/// The constant solution (kappa_N R)^{1/(2*-2)} of L_g u = u^{2*-1}.
pub fn constant_solution(m: &DiscreteManifold) -> Field {
    let p = critical_exponent::<f64>(m.dim());
    m.constant(m.kappa_r().powf(1.0 / (p - 2.0)))
}

/// Radii where the scanned eigenvalue changes sign through a small value, by linear
/// interpolation between neighbouring scan points. Jumps between different branches
/// (both sides larger than `threshold` in magnitude) are not crossings.
pub fn crossings(scan: &[ScanPoint], threshold: f64) -> Vec<f64> {
    scan.windows(2)
        .filter(|w| w[0].smallest.signum() != w[1].smallest.signum())
        .filter(|w| w[0].smallest.abs() < threshold && w[1].smallest.abs() < threshold)
        .map(|w| {
            let (a, b) = (w[0].smallest, w[1].smallest);
            w[0].radius + (w[1].radius - w[0].radius) * a / (a - b)
        })
        .collect()
}

/// CSV with columns r, smallest_gap, L.
pub fn write_scan_csv<W: Write>(out: W, scan: &[ScanPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r", "smallest_gap", "L"]).map_err(crate::bubble_euclid::csv_err)?;
    for s in scan {
        w.write_record([s.radius.to_string(), s.smallest.to_string(), s.below_critical.to_string()])
            .map_err(crate::bubble_euclid::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble_profiles::{build_profile, select_variant, CutoffSpec};

    fn product(radius: f64, n_t: usize, n_theta: usize) -> DiscreteManifold {
        DiscreteManifold::build(ManifoldSpec::product(radius, 3, n_t, n_theta)).unwrap()
    }

    #[test]
    fn first_weighted_mode_is_u0() {
        let m = product(1.3, 48, 32);
        let u0 = constant_solution(&m);
        let spec = weighted_eigs(&m, &u0, 6).unwrap();
        assert!((spec.eigenvalues[0] - 1.0).abs() < 1e-6, "{:?}", spec.eigenvalues);
        let ratio: Vec<f64> = spec.eigenfields[0].values().iter().map(|v| v / u0.values()[0]).collect();
        let (lo, hi) = ratio.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi - lo < 1e-6 * hi.abs());
        assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-12) && spec.eigenvalues[0] > 0.0);
        // normalization int u0^{2*-2} psi_l psi_m = delta_lm
        let w = u0.values()[0].powi(4);
        for a in 0..3 {
            for b in 0..3 {
                let ip = m.l2_inner(&spec.eigenfields[a], &spec.eigenfields[b]).unwrap() * w;
                assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn weighted_eigenvalues_match_closed_form() {
        // mu = 4 (k^2/r^2 + l(l+1) + 1/4) on S^1(r) x S^2
        let r = 1.5;
        let m = product(r, 128, 96);
        let u0 = constant_solution(&m);
        let spec = weighted_spectrum_certified(&m, &u0).unwrap();
        let mut exact: Vec<f64> = Vec::new();
        for l in 0..4u32 {
            for k in 0..8u32 {
                let v = 4.0 * ((k * k) as f64 / (r * r) + (l * (l + 1)) as f64 + 0.25);
                exact.push(v);
                if k > 0 {
                    exact.push(v);
                }
            }
        }
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in spec.eigenvalues.iter().zip(&exact) {
            assert!((a - b).abs() < 2e-3 * b, "{a} {b}");
        }
        assert_eq!(spec.below_critical, 3);
        // Rayleigh consistency in the dual norm
        for (mu, psi) in spec.eigenvalues.iter().zip(&spec.eigenfields) {
            let mut r = m.apply_operator(psi).unwrap();
            let wpsi = m.load(&psi.zip_map(&u0, |a, u| a * u.powi(4)).unwrap()).unwrap();
            axpy(-mu, &wpsi, &mut r);
            assert!(m.dual_norm_load(&r).unwrap() <= 1e-8 * m.h1_norm(psi).unwrap());
        }
    }

    #[test]
    fn weighted_eigs_rejects_nonpositive_weight() {
        let m = product(1.0, 32, 16);
        assert!(weighted_eigs(&m, &m.zeros(), 3).is_err());
    }

    #[test]
    fn closed_form_degenerate_radii() {
        for l in 1..4u32 {
            let r = l as f64;
            assert!(product_linearized_eigenvalue(3, r, l, 0).abs() < 1e-14);
            assert!(product_smallest_eigenvalue(3, r).abs() < 1e-14);
        }
        assert!(product_smallest_eigenvalue(3, 0.5).abs() > 0.5);
        // dimension 5: r = l / sqrt(3)
        assert!(product_linearized_eigenvalue(5, 2.0 / 3f64.sqrt(), 2, 0).abs() < 1e-13);
    }

    #[test]
    fn scan_finds_first_crossing() {
        let radii: Vec<f64> = (0..9).map(|k| 0.9 + 0.025 * k as f64).collect();
        let scan = nondegeneracy_scan(3, &radii, 64, 24).unwrap();
        let found = crossings(&scan, 0.3);
        assert_eq!(found.len(), 1, "{scan:?}");
        assert!((found[0] - 1.0).abs() < 0.01, "{found:?}");
        for s in &scan {
            assert!((s.smallest - product_smallest_eigenvalue(3, s.radius)).abs() < 5e-3, "{s:?}");
        }
        let mut buf = Vec::new();
        write_scan_csv(&mut buf, &scan).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }

    #[test]
    fn branch_switch_is_not_a_crossing() {
        let scan = [
            ScanPoint { radius: 1.5, smallest: -0.6, below_critical: 3 },
            ScanPoint { radius: 1.6, smallest: 0.56, below_critical: 3 },
        ];
        assert!(crossings(&scan, 0.3).is_empty());
    }

    #[test]
    fn coercivity_below_one_with_constraints() {
        let spec = ManifoldSpec::product(1.5, 3, 192, 128).graded(vec![0.0], 0.01, 12);
        let m = DiscreteManifold::build(spec).unwrap();
        let cut = CutoffSpec::new(m.spec().default_r0());
        let green = m.greens_function(0.0, f64::INFINITY).unwrap();
        let v = build_profile(&m, select_variant(3, true, false), 0.01, 0.0, cut, Some(&green)).unwrap();
        let gap = coercivity_gap(&m, None, &[&v], None).unwrap();
        let free = unconstrained_gap(&m, None, &[&v]).unwrap();
        assert!(gap < 0.95, "{gap}");
        assert!(free >= 1.0, "{free}");
        // fewer constraints can only raise the maximum
        let partial = max_weighted_quotient(&m, &v.value, &[&v.value]).unwrap();
        assert!(partial >= gap - 1e-6 && free >= partial - 1e-6);
    }

    #[test]
    fn dependent_constraints_rejected() {
        let m = product(1.0, 32, 16);
        let f = m.field_fn(|p| p.theta.cos());
        let g = f.map(|v| 2.0 * v);
        assert!(matches!(Projector::new(&m, &[&f, &g]), Err(Error::RankDeficient(_))));
        let proj = Projector::new(&m, &[&f]).unwrap();
        let mut x = m.field_fn(|p| p.theta.cos() + p.t.sin()).into_values();
        proj.apply(&mut x);
        assert!(proj.max_overlap(&m, &x) < 1e-10);
    }
}
