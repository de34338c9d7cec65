//! The mother kernel J: an even, compactly supported probability density in
//! exponential coordinates, carrying its own tensor Gauss-Legendre rule.
//!
//! The normalization kappa and the isotropic second moment are computed with
//! the kernel's own quadrature rule, and every operator evaluation reuses the
//! same nodes. This makes the moment identities (unit mass, vanishing first
//! moments, isotropic second moments) hold to rounding for the quadrature
//! discretization itself, which is what the polynomial-exactness properties
//! of the nonlocal operators rely on.

use crate::error::{Error, Result};
use crate::group::StratifiedGroup;
use crate::quad::{tensor_cube, GaussLegendre};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    /// Indicator of the ball ||t||_2 <= R. Exact in 1D; in higher dimensions
    /// the jump at the sphere makes the tensor rule slow, so it is kept for
    /// closed-form tests only.
    Indicator,
    /// c (1 - ||t||^2/R^2)^2 on the ball: C^1 at the support boundary.
    QuarticBump,
    /// Gaussian with sigma = R/3, truncated at the ball.
    TruncatedGaussian,
}

impl KernelShape {
    fn profile(self, radius: f64, t: &[f64]) -> f64 {
        let r2: f64 = t.iter().map(|v| v * v).sum();
        let rr = radius * radius;
        if r2 > rr {
            return 0.0;
        }
        match self {
            KernelShape::Indicator => 1.0,
            KernelShape::QuarticBump => {
                let s = 1.0 - r2 / rr;
                s * s
            }
            KernelShape::TruncatedGaussian => {
                let sigma2 = rr / 9.0;
                (-0.5 * r2 / sigma2).exp()
            }
        }
    }
}

/// A kernel bound to its quadrature discretization: flattened tensor nodes
/// over [-R, R]^n and per-node weights kappa * profile * gauss_weight.
#[derive(Debug, Clone)]
pub struct KernelJ {
    dim: usize,
    radius: f64,
    nodes_per_axis: usize,
    /// Node coordinates, `dim` consecutive entries per point.
    nodes: Vec<f64>,
    /// Raw tensor Gauss-Legendre weights (no profile).
    gauss_weights: Vec<f64>,
    /// kappa * profile(node) * gauss weight: the measure J(t) dt at the node.
    j_weights: Vec<f64>,
    kappa: f64,
    second_moment: f64,
    profile: KernelProfile,
}

#[derive(Clone)]
enum KernelProfile {
    Shape(KernelShape),
    Custom(std::sync::Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for KernelProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelProfile::Shape(s) => write!(f, "{s:?}"),
            KernelProfile::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Build one of the standard kernels for the given group.
pub fn make_bump_kernel(
    group: &StratifiedGroup,
    radius: f64,
    shape: KernelShape,
    nodes_per_axis: usize,
) -> Result<KernelJ> {
    KernelJ::from_profile_impl(
        group.dim(),
        radius,
        nodes_per_axis,
        KernelProfile::Shape(shape),
    )
}

impl KernelJ {
    /// Build a kernel from an arbitrary (not necessarily even) profile.
    /// Intended for tests that need a deliberately broken kernel; the
    /// standard constructors go through `make_bump_kernel`.
    pub fn from_profile<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(
        group: &StratifiedGroup,
        radius: f64,
        nodes_per_axis: usize,
        profile: F,
    ) -> Result<KernelJ> {
        KernelJ::from_profile_impl(
            group.dim(),
            radius,
            nodes_per_axis,
            KernelProfile::Custom(std::sync::Arc::new(profile)),
        )
    }

    fn from_profile_impl(
        dim: usize,
        radius: f64,
        nodes_per_axis: usize,
        profile: KernelProfile,
    ) -> Result<KernelJ> {
        if !(radius > 0.0) {
            return Err(Error::Kernel(format!("support radius must be positive, got {radius}")));
        }
        if nodes_per_axis < 8 {
            return Err(Error::Kernel(format!(
                "need at least 8 quadrature nodes per axis, got {nodes_per_axis}"
            )));
        }
        let rule = GaussLegendre::new(nodes_per_axis);
        let (nodes, gauss_weights) = tensor_cube(&rule, dim, radius);
        let eval = |t: &[f64]| -> f64 {
            match &profile {
                KernelProfile::Shape(s) => s.profile(radius, t),
                KernelProfile::Custom(f) => f(t),
            }
        };
        let mut mass_raw = 0.0;
        for (pt, w) in nodes.chunks(dim).zip(&gauss_weights) {
            let p = eval(pt);
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Kernel("profile must be finite and nonnegative".into()));
            }
            mass_raw += w * p;
        }
        if !(mass_raw > 0.0) {
            return Err(Error::Kernel("profile integrates to zero on its support".into()));
        }
        let kappa = 1.0 / mass_raw;
        let j_weights: Vec<f64> = nodes
            .chunks(dim)
            .zip(&gauss_weights)
            .map(|(pt, w)| kappa * eval(pt) * w)
            .collect();

        // Second moment along axis 0; the isotropy check below guards the
        // other axes.
        let mut second = vec![0.0; dim];
        for (pt, jw) in nodes.chunks(dim).zip(&j_weights) {
            for (axis, q) in second.iter_mut().enumerate() {
                *q += jw * pt[axis] * pt[axis];
            }
        }
        let c_j = second[0];
        if !(c_j > 0.0) {
            return Err(Error::Kernel("second moment must be positive".into()));
        }
        for (axis, q) in second.iter().enumerate() {
            if (q - c_j).abs() > 1e-10 * c_j.max(1.0) {
                return Err(Error::Kernel(format!(
                    "second moments are anisotropic: axis {axis} gives {q}, axis 0 gives {c_j}; \
                     increase the node count or fix the profile symmetry"
                )));
            }
        }

        Ok(KernelJ {
            dim,
            radius,
            nodes_per_axis,
            nodes,
            gauss_weights,
            j_weights,
            kappa,
            second_moment: c_j,
            profile,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// The isotropic second moment C(J).
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn node_count(&self) -> usize {
        self.j_weights.len()
    }

    /// Iterate (node coordinates, J(t) dt weight).
    pub fn quadrature(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.nodes.chunks(self.dim).zip(self.j_weights.iter().copied())
    }

    /// Iterate (node coordinates, raw Gauss weight) for integrals where the
    /// kernel density is evaluated inside the integrand.
    pub fn raw_quadrature(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.nodes.chunks(self.dim).zip(self.gauss_weights.iter().copied())
    }

    /// Kernel density J(t) = kappa * profile(t), zero outside the support.
    pub fn density(&self, t: &[f64]) -> f64 {
        if t.iter().any(|v| v.abs() > self.radius) {
            return 0.0;
        }
        let p = match &self.profile {
            KernelProfile::Shape(s) => s.profile(self.radius, t),
            KernelProfile::Custom(f) => f(t),
        };
        self.kappa * p
    }

    /// Validate unit mass, vanishing first moments and isotropic second
    /// moments against the tolerance.
    pub fn validate_moments(&self, tol: f64) -> MomentReport {
        let dim = self.dim;
        let mut mass = 0.0;
        let mut first = vec![0.0; dim];
        let mut second = vec![0.0; dim * dim];
        for (pt, jw) in self.quadrature() {
            mass += jw;
            for i in 0..dim {
                first[i] += jw * pt[i];
                for j in 0..dim {
                    second[i * dim + j] += jw * pt[i] * pt[j];
                }
            }
        }
        let c_j = self.second_moment;
        let mut violations = Vec::new();
        if (mass - 1.0).abs() > tol {
            violations.push(format!("mass {mass} differs from 1 beyond {tol}"));
        }
        for (i, m) in first.iter().enumerate() {
            if m.abs() > tol {
                violations.push(format!("first moment along axis {i} is {m}"));
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let target = if i == j { c_j } else { 0.0 };
                let v = second[i * dim + j];
                if (v - target).abs() > tol {
                    violations.push(format!(
                        "second moment ({i}, {j}) is {v}, expected {target}"
                    ));
                }
            }
        }
        MomentReport { mass, first_moments: first, second_moments: second, c_j, violations }
    }
}

/// Outcome of a kernel moment validation.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub mass: f64,
    pub first_moments: Vec<f64>,
    /// Row-major dim x dim matrix of second moments.
    pub second_moments: Vec<f64>,
    pub c_j: f64,
    pub violations: Vec<String>,
}

impl MomentReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}
