//! Symmetry-reduced model manifolds and their conformal Laplacian
//! L_g = -Delta_g + kappa_N R_g.
//!
//! Fields are functions of (t, theta): t the circle coordinate of S^1(r) x S^{N-1}
//! and theta the polar angle on the sphere factor, measured from the symmetry axis.
//! The round sphere S^N is reduced to theta alone and serves as an oracle.
//! Discretization is a cell-centered finite volume scheme: node weights are exact
//! cell volumes, fluxes use face areas over node distances, so the assembled
//! operator is symmetric by construction and has no flux through the poles.

mod green;
pub mod io;

pub use green::{exact_mass, GreenData};

use crate::bubble_euclid::kappa;
use crate::error::{Error, Result};
use crate::linalg::{dense_pencil_eig, dot, LuSolver, SpdSolver, SymOperator};
use crate::quad_engine::{gk21, wrap, GradedGrid1D};
use crate::scalar::sphere_area;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Which model manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ManifoldKind {
    RoundSphere { dim: usize },
    ProductCircleSphere { radius: f64, dim: usize },
}

/// Node clustering request: grids are refined around the axial positions `centers`
/// (t direction) and around the axis theta = 0, so that at least `min_nodes`
/// nodes fall within `scale` of each center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingSpec {
    pub centers: Vec<f64>,
    pub scale: f64,
    pub min_nodes: usize,
}

/// Description of a discrete model manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub n_t: usize,
    pub n_theta: usize,
    #[serde(default)]
    pub grading: Option<GradingSpec>,
}

impl ManifoldSpec {
    /// Uniform grid on S^1(r) x S^{N-1}.
    pub fn product(radius: f64, dim: usize, n_t: usize, n_theta: usize) -> Self {
        Self { kind: ManifoldKind::ProductCircleSphere { radius, dim }, n_t, n_theta, grading: None }
    }

    /// Uniform grid on S^N.
    pub fn sphere(dim: usize, n_theta: usize) -> Self {
        Self { kind: ManifoldKind::RoundSphere { dim }, n_t: 1, n_theta, grading: None }
    }

    /// Same spec with grading around the given centers.
    pub fn graded(mut self, centers: Vec<f64>, scale: f64, min_nodes: usize) -> Self {
        self.grading = Some(GradingSpec { centers, scale, min_nodes });
        self
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ManifoldKind::RoundSphere { dim } | ManifoldKind::ProductCircleSphere { dim, .. } => dim,
        }
    }

    /// Circle radius of the product model.
    pub fn radius(&self) -> Option<f64> {
        match self.kind {
            ManifoldKind::ProductCircleSphere { radius, .. } => Some(radius),
            ManifoldKind::RoundSphere { .. } => None,
        }
    }

    /// Exact Riemannian volume.
    pub fn volume(&self) -> f64 {
        match self.kind {
            ManifoldKind::RoundSphere { dim } => sphere_area::<f64>(dim + 1),
            ManifoldKind::ProductCircleSphere { radius, dim } => 2.0 * PI * radius * sphere_area::<f64>(dim),
        }
    }

    /// Constant scalar curvature of the model.
    pub fn scalar_curvature(&self) -> f64 {
        let n = self.dim() as f64;
        match self.kind {
            ManifoldKind::RoundSphere { .. } => n * (n - 1.0),
            ManifoldKind::ProductCircleSphere { .. } => (n - 1.0) * (n - 2.0),
        }
    }

    /// Default cutoff radius: a quarter of the injectivity radius.
    pub fn default_r0(&self) -> f64 {
        match self.kind {
            ManifoldKind::RoundSphere { .. } => PI / 4.0,
            ManifoldKind::ProductCircleSphere { radius, .. } => (PI * radius).min(PI) / 4.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim < 3 {
            return Err(Error::InvalidInput(format!("dimension must be at least 3, got {dim}")));
        }
        if self.n_theta < 16 {
            return Err(Error::InvalidInput(format!("n_theta = {} below 16", self.n_theta)));
        }
        match self.kind {
            ManifoldKind::ProductCircleSphere { radius, .. } => {
                if !(radius > 0.0) {
                    return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
                }
                if self.n_t < 16 {
                    return Err(Error::InvalidInput(format!("n_t = {} below 16", self.n_t)));
                }
            }
            ManifoldKind::RoundSphere { .. } => {
                if self.n_t != 1 {
                    return Err(Error::InvalidInput("the sphere model is one dimensional (n_t = 1)".into()));
                }
            }
        }
        if let Some(g) = &self.grading {
            if !(g.scale > 0.0) || g.centers.is_empty() {
                return Err(Error::InvalidInput("grading needs a positive scale and at least one center".into()));
            }
        }
        Ok(())
    }

    /// Stable fingerprint of the spec.
    pub fn id(&self) -> ManifoldId {
        let text = serde_json::to_string(self).expect("spec serializes");
        // FNV-1a
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        ManifoldId(h)
    }
}

/// Identity of the manifold a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifoldId(pub u64);

/// Function sampled at the nodes of a discrete manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    manifold: ManifoldId,
    values: Vec<f64>,
}

impl Field {
    pub fn manifold(&self) -> ManifoldId {
        self.manifold
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Node-wise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { manifold: self.manifold, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Node-wise combination of two fields on the same manifold.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.manifold != other.manifold {
            return Err(Error::ManifoldMismatch);
        }
        Ok(Field {
            manifold: self.manifold,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// self + alpha * other
    pub fn plus_scaled(&self, alpha: f64, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reduced coordinates of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub t: f64,
    pub theta: f64,
}

/// Assembled discrete model manifold.
#[derive(Debug)]
pub struct DiscreteManifold {
    spec: ManifoldSpec,
    id: ManifoldId,
    grid_t: Option<GradedGrid1D>,
    grid_theta: GradedGrid1D,
    weights: Vec<f64>,
    operator: SymOperator,
    factor: OnceLock<SpdSolver>,
}

impl DiscreteManifold {
    /// Assemble grids, quadrature weights and the conformal Laplacian.
    pub fn build(spec: ManifoldSpec) -> Result<Self> {
        spec.validate()?;
        let dim = spec.dim();
        let grading = spec.grading.clone();
        let grid_theta = match &grading {
            Some(g) => GradedGrid1D::interval_resolving(0.0, PI, spec.n_theta, 0.0, g.scale, g.min_nodes)?,
            None => GradedGrid1D::uniform(0.0, PI, spec.n_theta)?,
        };
        let grid_t = match spec.kind {
            ManifoldKind::ProductCircleSphere { radius, .. } => {
                let length = 2.0 * PI * radius;
                Some(match &grading {
                    Some(g) => GradedGrid1D::periodic_resolving(length, spec.n_t, &g.centers, g.scale, g.min_nodes)?,
                    None => GradedGrid1D::uniform_periodic(0.0, length, spec.n_t)?,
                })
            }
            ManifoldKind::RoundSphere { .. } => None,
        };
        // the sphere factor's area element: |S^{k-1}| sin^{k-1}(theta) with k = N - 1
        // on the product and k = N on S^N
        let power = match spec.kind {
            ManifoldKind::RoundSphere { .. } => dim - 1,
            ManifoldKind::ProductCircleSphere { .. } => dim - 2,
        };
        let area = sphere_area::<f64>(power + 1);
        let density = |th: f64| area * th.sin().powi(power as i32);
        let cell_area: Vec<f64> = grid_theta
            .faces
            .windows(2)
            .map(|w| {
                // two panels keep the sin^k cell integrals at machine precision
                let mid = 0.5 * (w[0] + w[1]);
                gk21(&density, w[0], mid).0 + gk21(&density, mid, w[1]).0
            })
            .collect();
        let face_area: Vec<f64> = grid_theta.faces.iter().map(|&f| density(f)).collect();

        let n_t = grid_t.as_ref().map_or(1, |g| g.len());
        let n_th = grid_theta.len();
        let n = n_t * n_th;
        let dt: Vec<f64> = grid_t.as_ref().map_or(vec![1.0], |g| g.weights.clone());
        let mut weights = vec![0.0; n];
        for i in 0..n_t {
            for j in 0..n_th {
                weights[i * n_th + j] = dt[i] * cell_area[j];
            }
        }
        let total: f64 = weights.iter().sum();
        let volume = spec.volume();
        if (total - volume).abs() > 1e-8 * volume {
            return Err(Error::InvalidInput(format!(
                "resolution too coarse: discrete volume {total} against {volume}"
            )));
        }

        let kr = kappa::<f64>(dim) * spec.scalar_curvature();
        let mut diag: Vec<f64> = weights.iter().map(|w| kr * w).collect();
        let mut edges = Vec::with_capacity(2 * n);
        let mut couple = |a: usize, b: usize, c: f64, diag: &mut Vec<f64>| {
            diag[a] += c;
            diag[b] += c;
            edges.push((a, b, -c));
        };
        for i in 0..n_t {
            for j in 0..n_th - 1 {
                let c = dt[i] * face_area[j + 1] / (grid_theta.nodes[j + 1] - grid_theta.nodes[j]);
                couple(i * n_th + j, i * n_th + j + 1, c, &mut diag);
            }
        }
        if let Some(gt) = &grid_t {
            for i in 0..n_t {
                let next = (i + 1) % n_t;
                let gap = gt.forward_gap(i).expect("periodic grid");
                for j in 0..n_th {
                    couple(i * n_th + j, next * n_th + j, cell_area[j] / gap, &mut diag);
                }
            }
        }
        let id = spec.id();
        Ok(Self {
            spec,
            id,
            grid_t,
            grid_theta,
            weights,
            operator: SymOperator { diag, edges },
            factor: OnceLock::new(),
        })
    }

    /// Rebuild with other resolutions, keeping kind and grading.
    pub fn with_resolution(&self, n_t: usize, n_theta: usize) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.n_t = if self.grid_t.is_some() { n_t } else { 1 };
        spec.n_theta = n_theta;
        // keep roughly the same grading strength: resolved node counts scale with n
        if let Some(g) = spec.grading.as_mut() {
            g.min_nodes = (g.min_nodes * n_theta / self.spec.n_theta).max(1);
        }
        Self::build(spec)
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn id(&self) -> ManifoldId {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.grid_t.as_ref().map_or(1, |g| g.len())
    }

    pub fn n_theta(&self) -> usize {
        self.grid_theta.len()
    }

    pub fn grid_t(&self) -> Option<&GradedGrid1D> {
        self.grid_t.as_ref()
    }

    pub fn grid_theta(&self) -> &GradedGrid1D {
        &self.grid_theta
    }

    /// Length of the circle factor (0 for the sphere).
    pub fn period(&self) -> f64 {
        self.spec.radius().map_or(0.0, |r| 2.0 * PI * r)
    }

    /// Node index of (t index, theta index).
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_theta() + j
    }

    pub fn node(&self, k: usize) -> Node {
        let n_th = self.n_theta();
        let (i, j) = (k / n_th, k % n_th);
        Node { t: self.grid_t.as_ref().map_or(0.0, |g| g.nodes[i]), theta: self.grid_theta.nodes[j] }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    /// Quadrature weights (cell volumes).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Scalar curvature at every node.
    pub fn scalar_curvature(&self) -> Vec<f64> {
        vec![self.spec.scalar_curvature(); self.len()]
    }

    /// kappa_N R_g (constant on both models).
    pub fn kappa_r(&self) -> f64 {
        kappa::<f64>(self.dim()) * self.spec.scalar_curvature()
    }

    /// Assembled stiffness-plus-curvature matrix A, so that <f, L_g g> = f^T A g.
    pub fn operator(&self) -> &SymOperator {
        &self.operator
    }

    /// Index of the t node closest to `t`.
    pub fn nearest_t_index(&self, t: f64) -> usize {
        match &self.grid_t {
            Some(g) => {
                let length = self.period();
                (0..g.len())
                    .min_by(|&a, &b| {
                        wrap(g.nodes[a] - t, length).abs().partial_cmp(&wrap(g.nodes[b] - t, length).abs()).unwrap()
                    })
                    .unwrap()
            }
            None => 0,
        }
    }

    /// Geodesic distance from the axis point at height `t_axis` (theta = 0) to node k.
    pub fn axis_distance(&self, t_axis: f64, k: usize) -> f64 {
        let p = self.node(k);
        match self.spec.kind {
            ManifoldKind::ProductCircleSphere { .. } => {
                let s = wrap(p.t - t_axis, self.period());
                (s * s + p.theta * p.theta).sqrt()
            }
            ManifoldKind::RoundSphere { .. } => p.theta,
        }
    }

    /// Field from raw node values.
    pub fn field(&self, values: Vec<f64>) -> Result<Field> {
        if values.len() != self.len() {
            return Err(Error::InvalidInput(format!("field has {} values, manifold {} nodes", values.len(), self.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(Field { manifold: self.id, values })
    }

    /// Field sampled from a function of the reduced coordinates.
    pub fn field_fn(&self, f: impl Fn(Node) -> f64) -> Field {
        Field { manifold: self.id, values: self.nodes().map(f).collect() }
    }

    pub fn constant(&self, c: f64) -> Field {
        Field { manifold: self.id, values: vec![c; self.len()] }
    }

    pub fn zeros(&self) -> Field {
        self.constant(0.0)
    }

    pub(crate) fn wrap_values(&self, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), self.len());
        Field { manifold: self.id, values }
    }

    pub(crate) fn check(&self, f: &Field) -> Result<()> {
        if f.manifold != self.id || f.len() != self.len() {
            return Err(Error::ManifoldMismatch);
        }
        Ok(())
    }

    /// int_M f dv_g
    pub fn integrate(&self, f: &Field) -> Result<f64> {
        self.check(f)?;
        Ok(dot(&self.weights, &f.values))
    }

    /// int_M f g dv_g
    pub fn l2_inner(&self, f: &Field, g: &Field) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        Ok(self.weights.iter().zip(&f.values).zip(&g.values).map(|((w, a), b)| w * a * b).sum())
    }

    /// (int_M |f|^p dv_g)^{1/p}
    pub fn lp_norm(&self, f: &Field, p: f64) -> Result<f64> {
        self.check(f)?;
        let s: f64 = self.weights.iter().zip(&f.values).map(|(w, v)| w * v.abs().powf(p)).sum();
        Ok(s.powf(1.0 / p))
    }

    /// Load vector M f (weights times values).
    pub fn load(&self, f: &Field) -> Result<Vec<f64>> {
        self.check(f)?;
        Ok(self.weights.iter().zip(&f.values).map(|(w, v)| w * v).collect())
    }

    /// A f as a load vector (the weak action of L_g).
    pub fn apply_operator(&self, f: &Field) -> Result<Vec<f64>> {
        self.check(f)?;
        Ok(self.operator.apply(&f.values))
    }

    /// Pointwise discrete L_g f = M^{-1} A f.
    pub fn apply_l(&self, f: &Field) -> Result<Field> {
        let y = self.apply_operator(f)?;
        Ok(self.wrap_values(y.iter().zip(&self.weights).map(|(a, w)| a / w).collect()))
    }

    /// <f, g>_{H^1(M)} = int |grad f . grad g| + kappa R f g, via the assembled operator.
    pub fn h1_inner(&self, f: &Field, g: &Field) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        Ok(self.operator.form(&f.values, &g.values))
    }

    pub fn h1_norm(&self, f: &Field) -> Result<f64> {
        Ok(self.h1_inner(f, f)?.max(0.0).sqrt())
    }

    fn factor(&self) -> Result<&SpdSolver> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = self.operator.cholesky()?;
        Ok(self.factor.get_or_init(|| f))
    }

    /// A^{-1} load
    pub fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        if load.len() != self.len() {
            return Err(Error::ManifoldMismatch);
        }
        Ok(self.factor()?.solve(load))
    }

    /// Dual norm sqrt(load^T A^{-1} load) of a load vector.
    pub fn dual_norm_load(&self, load: &[f64]) -> Result<f64> {
        let x = self.solve_load(load)?;
        Ok(dot(load, &x).max(0.0).sqrt())
    }

    /// |f|_{H^{-1}(M)} = sqrt(<f, L_g^{-1} f>).
    pub fn hminus1_norm(&self, f: &Field) -> Result<f64> {
        let load = self.load(f)?;
        self.dual_norm_load(&load)
    }

    /// Solve (L_g - shift) x = rhs, with `shift` a multiplication operator.
    ///
    /// Shifted operators are probed for near-singularity first; an eigenvalue of
    /// (L_g - shift) with magnitude below `singular_tol` (relative to 1 + max|shift|)
    /// is reported as an error.
    pub fn solve_l(&self, rhs: &Field, shift: Option<&Field>) -> Result<Field> {
        self.solve_l_with(rhs, shift, DEFAULT_SINGULAR_TOL)
    }

    /// [`DiscreteManifold::solve_l`] with an explicit singularity tolerance.
    pub fn solve_l_with(&self, rhs: &Field, shift: Option<&Field>, singular_tol: f64) -> Result<Field> {
        let load = self.load(rhs)?;
        let x = match shift {
            None => self.solve_load(&load)?,
            Some(s) => {
                let shifted = self.shifted_solver(s)?;
                let (eigenvalue, _) = self.smallest_shifted_eigenvalue_with(s, &shifted)?;
                if eigenvalue.abs() < singular_tol * (1.0 + s.max_abs()) {
                    return Err(Error::NearSingular { eigenvalue });
                }
                let mut x = shifted.solve(&load);
                // one step of refinement
                let op = self.operator.shifted(&self.shift_diag(s));
                let r: Vec<f64> = op.apply(&x).iter().zip(&load).map(|(a, b)| b - a).collect();
                let dx = shifted.solve(&r);
                for (xi, d) in x.iter_mut().zip(&dx) {
                    *xi += d;
                }
                x
            }
        };
        Ok(self.wrap_values(x))
    }

    fn shift_diag(&self, s: &Field) -> Vec<f64> {
        self.weights.iter().zip(&s.values).map(|(w, v)| w * v).collect()
    }

    fn shifted_solver(&self, s: &Field) -> Result<LuSolver> {
        self.check(s)?;
        self.operator.shifted(&self.shift_diag(s)).lu()
    }

    /// Eigenvalue of smallest magnitude of the pencil (A - M shift, M), with its eigenvector.
    pub fn smallest_shifted_eigenvalue(&self, shift: &Field) -> Result<(f64, Field)> {
        let solver = self.shifted_solver(shift)?;
        self.smallest_shifted_eigenvalue_with(shift, &solver)
    }

    fn smallest_shifted_eigenvalue_with(&self, shift: &Field, solver: &LuSolver) -> Result<(f64, Field)> {
        let op = self.operator.shifted(&self.shift_diag(shift));
        let n = self.len();
        let block = 4;
        // deterministic start block: low modes plus a smooth bump
        let mut basis: Vec<Vec<f64>> = (0..block)
            .map(|b| {
                self.nodes()
                    .map(|p| 1.0 + (b as f64 + 1.0) * 0.37 * (p.t * (b as f64 + 0.5)).cos() + 0.11 * (p.theta * b as f64).cos())
                    .collect()
            })
            .collect();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            for v in basis.iter_mut() {
                let mv: Vec<f64> = v.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
                *v = solver.solve(&mv);
            }
            // Rayleigh-Ritz on the block for (op, M)
            let h = DMatrix::from_fn(block, block, |a, b| op.form(&basis[a], &basis[b]));
            let g = DMatrix::from_fn(block, block, |a, b| {
                (0..n).map(|k| self.weights[k] * basis[a][k] * basis[b][k]).sum::<f64>()
            });
            let (vals, vecs) = dense_pencil_eig(&h, &g)?;
            let mut rotated = vec![vec![0.0; n]; block];
            for (c, r) in rotated.iter_mut().enumerate() {
                for (a, v) in basis.iter().enumerate() {
                    let coef = vecs[(a, c)];
                    for k in 0..n {
                        r[k] += coef * v[k];
                    }
                }
            }
            basis = rotated;
            let (best, &value) = vals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap();
            if (value - last).abs() <= 1e-10 * (1.0 + value.abs()) {
                return Ok((value, self.wrap_values(basis.swap_remove(best))));
            }
            last = value;
        }
        Err(Error::NoConvergence("shifted eigenvalue probe".into()))
    }

    /// Conformal chart flattening the product model around the axis point at height `t_center`.
    pub fn flat_chart(&self, t_center: f64) -> Result<FlatChart> {
        match self.spec.kind {
            ManifoldKind::ProductCircleSphere { radius, dim } => {
                Ok(FlatChart { t_center, period: 2.0 * PI * radius, dim })
            }
            ManifoldKind::RoundSphere { .. } => {
                Err(Error::InvalidInput("flat chart is implemented for the product model".into()))
            }
        }
    }

    /// Green's function of L_g with pole on the axis at height `t_pole`.
    pub fn greens_function(&self, t_pole: f64, tol: f64) -> Result<GreenData> {
        green::greens_function(self, t_pole, tol)
    }
}

/// Default relative tolerance for declaring a shifted operator singular.
pub const DEFAULT_SINGULAR_TOL: f64 = 1e-3;

/// Conformal flat coordinates on S^1(r) x S^{N-1} around an axis point.
///
/// x = e^s omega maps the cylinder onto R^N minus the origin with
/// g_flat = e^{2s} g; centering at the pole gives y = e^s omega - e_N, so
/// |y|^2 = e^{2s} - 2 e^s cos(theta) + 1, the conformal factor is
/// Lambda = e^{(N-2)s/2} and L_g(Lambda phi) = Lambda^{2*-1} (-Delta_y phi).
/// The chart is used on the fundamental domain s in (-period/2, period/2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatChart {
    pub t_center: f64,
    pub period: f64,
    pub dim: usize,
}

/// A point in flat coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    /// signed axial offset from the center
    pub s: f64,
    pub theta: f64,
    /// flat distance |y| to the pole
    pub rho: f64,
    /// conformal factor Lambda
    pub lambda: f64,
    /// d rho / d s
    pub rho_s: f64,
    /// d rho / d theta
    pub rho_theta: f64,
}

impl FlatChart {
    pub fn point(&self, t: f64, theta: f64) -> ChartPoint {
        let s = wrap(t - self.t_center, self.period);
        let es = s.exp();
        let half = (0.5 * theta).sin();
        let rho = (s.exp_m1().powi(2) + 4.0 * es * half * half).sqrt();
        let lambda = (0.5 * (self.dim as f64 - 2.0) * s).exp();
        let (rho_s, rho_theta) = if rho > 0.0 {
            // e^{2s} - e^s cos(theta) = e^s (e^s - 1) + 2 e^s sin^2(theta/2)
            ((es * s.exp_m1() + 2.0 * es * half * half) / rho, es * theta.sin() / rho)
        } else {
            (0.0, 0.0)
        };
        ChartPoint { s, theta, rho, lambda, rho_s, rho_theta }
    }

    /// Flat inner product of gradients given (d/ds, d/dtheta) components.
    pub fn flat_dot(&self, p: &ChartPoint, a: (f64, f64), b: (f64, f64)) -> f64 {
        (-2.0 * p.s).exp() * (a.0 * b.0 + a.1 * b.1)
    }

    /// Geodesic distance to the pole in the product metric.
    pub fn geodesic(&self, p: &ChartPoint) -> f64 {
        (p.s * p.s + p.theta * p.theta).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble_euclid::{alpha, critical_exponent};

    #[test]
    fn sphere_volume() {
        let m = DiscreteManifold::build(ManifoldSpec::sphere(3, 512)).unwrap();
        let v: f64 = m.weights().iter().sum();
        assert!((v - 2.0 * PI * PI).abs() < 1e-8 * 2.0 * PI * PI);
    }

    #[test]
    fn product_curvature_and_volume() {
        let m = DiscreteManifold::build(ManifoldSpec::product(1.0, 3, 128, 256)).unwrap();
        assert!(m.scalar_curvature().iter().all(|&r| r == 2.0));
        let v: f64 = m.weights().iter().sum();
        assert!((v - 8.0 * PI * PI).abs() < 1e-8 * v);
    }

    #[test]
    fn coarse_resolution_rejected() {
        assert!(DiscreteManifold::build(ManifoldSpec::product(1.0, 3, 8, 64)).is_err());
        assert!(DiscreteManifold::build(ManifoldSpec::product(-1.0, 3, 32, 64)).is_err());
    }

    #[test]
    fn constant_energy() {
        let m = DiscreteManifold::build(ManifoldSpec::product(1.0, 3, 32, 64)).unwrap();
        let one = m.constant(1.0);
        let e = m.h1_inner(&one, &one).unwrap();
        assert!((e - 2.0 * PI * PI).abs() < 1e-8 * e);
    }

    #[test]
    fn h1_symmetry_and_parity() {
        let m = DiscreteManifold::build(ManifoldSpec::product(1.5, 3, 64, 64)).unwrap();
        let f = m.field_fn(|p| (p.t / 1.5).cos() + p.theta.cos());
        let g = m.field_fn(|p| (p.t / 1.5).sin() * (1.0 + p.theta.cos()));
        let (fg, gf) = (m.h1_inner(&f, &g).unwrap(), m.h1_inner(&g, &f).unwrap());
        assert!((fg - gf).abs() < 1e-13 * m.h1_norm(&f).unwrap() * m.h1_norm(&g).unwrap());
        let even = m.field_fn(|p| (p.t / 1.5).cos());
        assert!(m.h1_inner(&even, &g).unwrap().abs() < 1e-10);
    }

    #[test]
    fn solve_round_trip_and_duality() {
        let m = DiscreteManifold::build(ManifoldSpec::product(1.5, 3, 48, 48)).unwrap();
        let phi = m.field_fn(|p| (p.t / 1.5).sin() + p.theta.cos().powi(2));
        let lphi = m.apply_l(&phi).unwrap();
        let back = m.solve_l(&lphi, None).unwrap();
        for (a, b) in back.values().iter().zip(phi.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let h1 = m.h1_norm(&phi).unwrap();
        assert!((m.hminus1_norm(&lphi).unwrap() - h1).abs() < 1e-10 * h1);
        assert_eq!(m.hminus1_norm(&m.zeros()).unwrap(), 0.0);
        // |<f, phi>| <= |f|_{-1} |phi|_1 with equality at phi = L^{-1} f
        let f = m.field_fn(|p| p.theta.sin() + 0.3);
        let psi = m.solve_l(&f, None).unwrap();
        let lhs = m.l2_inner(&f, &psi).unwrap();
        let rhs = m.hminus1_norm(&f).unwrap() * m.h1_norm(&psi).unwrap();
        assert!((lhs - rhs).abs() < 1e-8 * rhs);
        let other = m.l2_inner(&f, &phi).unwrap().abs();
        assert!(other <= m.hminus1_norm(&f).unwrap() * h1 * (1.0 + 1e-12));
    }

    #[test]
    fn constant_solution_has_zero_deficit() {
        let m = DiscreteManifold::build(ManifoldSpec::product(1.5, 3, 32, 64)).unwrap();
        let u0 = 0.5f64.sqrt();
        let u = m.constant(u0);
        let p = critical_exponent::<f64>(3) - 1.0;
        let f = m.apply_l(&u).unwrap().zip_map(&u, |a, b| a - b.powf(p)).unwrap();
        assert!(f.max_abs() < 1e-12);
        let back = m.solve_l(&m.constant(u0.powf(p)), None).unwrap();
        assert!(back.values().iter().all(|v| (v - u0).abs() < 1e-12));
    }

    #[test]
    fn shifted_solve_detects_degenerate_radius() {
        // r = 1/sqrt(N-2) = 1 for N = 3
        let m = DiscreteManifold::build(ManifoldSpec::product(1.0, 3, 64, 32)).unwrap();
        let shift = m.constant(1.25);
        let rhs = m.field_fn(|p| p.theta.cos());
        assert!(matches!(m.solve_l(&rhs, Some(&shift)), Err(Error::NearSingular { .. })));
        let m = DiscreteManifold::build(ManifoldSpec::product(0.7, 3, 64, 32)).unwrap();
        let shift = m.constant(1.25);
        let rhs = m.field_fn(|p| p.theta.cos());
        let x = m.solve_l(&rhs, Some(&shift)).unwrap();
        let lx = m.apply_l(&x).unwrap().zip_map(&x, |a, b| a - 1.25 * b).unwrap();
        let err = lx.zip_map(&rhs, |a, b| a - b).unwrap();
        let rel = m.lp_norm(&err, 2.0).unwrap() / m.lp_norm(&rhs, 2.0).unwrap();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn circle_mode_eigenvalue_converges_at_second_order() {
        let r = 1.5;
        let exact = 1.0 / (r * r) + kappa::<f64>(3) * 2.0;
        let mut errors = Vec::new();
        for n in [32usize, 64, 128] {
            let m = DiscreteManifold::build(ManifoldSpec::product(r, 3, n, 32)).unwrap();
            let f = m.field_fn(|p| (p.t / r).cos());
            let rq = m.h1_inner(&f, &f).unwrap() / m.l2_inner(&f, &f).unwrap();
            errors.push((rq - exact).abs());
        }
        assert!(errors[0] / errors[1] > 3.5 && errors[1] / errors[2] > 3.5, "{errors:?}");
    }

    #[test]
    fn pole_rows_reproduce_smooth_laplacian() {
        // -Delta cos(theta) = N cos(theta) on S^N, checked on the rows next to the poles
        let mut errs = Vec::new();
        for n in [64usize, 128, 256] {
            let m = DiscreteManifold::build(ManifoldSpec::sphere(3, n)).unwrap();
            let f = m.field_fn(|p| p.theta.cos());
            let lf = m.apply_l(&f).unwrap();
            let kr = m.kappa_r();
            let e0 = (lf.values()[0] - (3.0 + kr) * f.values()[0]).abs();
            let e1 = (lf.values()[n - 1] - (3.0 + kr) * f.values()[n - 1]).abs();
            errs.push(e0.max(e1));
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
        assert!(errs[2] < 1e-3);
    }

    #[test]
    fn graded_grids_keep_volume() {
        let spec = ManifoldSpec::product(1.5, 3, 64, 64).graded(vec![0.0], 0.05, 6);
        let m = DiscreteManifold::build(spec).unwrap();
        let v: f64 = m.weights().iter().sum();
        assert!((v - 12.0 * PI * PI).abs() < 1e-10 * v);
        assert!(m.grid_theta().nodes.iter().filter(|&&x| x < 0.05).count() >= 6);
    }

    #[test]
    fn stereographic_bubble_is_a_solution() {
        // the pullback of U_delta to S^3 solves L u = u^{2*-1} exactly; the discrete
        // residual must vanish at second order
        let n = 3;
        let delta: f64 = 0.5;
        let p = critical_exponent::<f64>(n) - 1.0;
        let mut gammas = Vec::new();
        for res in [128usize, 256, 512] {
            let m = DiscreteManifold::build(ManifoldSpec::sphere(n, res)).unwrap();
            let u = m.field_fn(|q| {
                let y2 = (0.5 * q.theta).tan().powi(2);
                alpha::<f64>(n) * (delta / (delta * delta + y2)).powf(0.5) * ((1.0 + y2) / 2.0).powf(0.5)
            });
            let f = m.apply_l(&u).unwrap().zip_map(&u, |a, b| a - b.powf(p)).unwrap();
            gammas.push(m.hminus1_norm(&f).unwrap());
        }
        assert!(gammas[0] / gammas[1] > 3.0 && gammas[1] / gammas[2] > 3.0, "{gammas:?}");
    }

    #[test]
    fn chart_conformal_factor_and_distance() {
        let chart = FlatChart { t_center: 0.5, period: 2.0 * PI, dim: 3 };
        let p = chart.point(0.5 + 0.2, 0.0);
        assert!((p.rho - 0.2f64.exp_m1()).abs() < 1e-15);
        assert!((p.lambda - 0.1f64.exp()).abs() < 1e-15);
        let q = chart.point(0.5, PI);
        assert!((q.rho - 2.0).abs() < 1e-15);
        // derivative of rho against differences
        let h = 1e-6;
        let a = chart.point(0.9, 0.7);
        let ds = (chart.point(0.9 + h, 0.7).rho - chart.point(0.9 - h, 0.7).rho) / (2.0 * h);
        let dth = (chart.point(0.9, 0.7 + h).rho - chart.point(0.9, 0.7 - h).rho) / (2.0 * h);
        assert!((a.rho_s - ds).abs() < 1e-8 && (a.rho_theta - dth).abs() < 1e-8);
    }
}
