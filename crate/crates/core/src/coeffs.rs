//! Coefficient fields for the drift-diffusion and Fokker-Planck problems,
//! with the per-point derived data used by the rescaled kernels: the
//! Cholesky factor of the diffusion block, its inverse, the determinant and
//! the positivity constant M of the affine weight.

use crate::error::{Error, Result};
use crate::group::{ScalarField, StratifiedGroup};
use crate::kernel::KernelJ;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientMode {
    AnisotropicDrift,
    FokkerPlanck,
}

/// The coefficient data of a problem. In anisotropic-drift mode `a` is the
/// n1 x n1 symmetric positive definite diffusion block and `b` the drift
/// fields for the first n1 + n2 coordinates; in Fokker-Planck mode only the
/// scalar field is present.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    mode: CoefficientMode,
    n1: usize,
    span: usize,
    a: Vec<ScalarField>,
    b: Vec<ScalarField>,
    a_scalar: Option<ScalarField>,
    positivity: Option<f64>,
    beta: f64,
}

/// Cholesky-derived data of the diffusion block at one point.
#[derive(Debug, Clone)]
pub struct PointCoefficients {
    /// Lower-triangular factor of the n1 x n1 block.
    pub chol: Matrix,
    /// Inverse of the factor.
    pub chol_inv: Matrix,
    /// det A(x) = det Atilde(x); the identity extension does not change it.
    pub det_a: f64,
    /// Drift values b_i(x) for i < n1 + n2.
    pub drift: Vec<f64>,
}

impl CoefficientSet {
    pub fn anisotropic(
        group: &StratifiedGroup,
        a: Vec<Vec<ScalarField>>,
        b: Vec<ScalarField>,
        beta: f64,
    ) -> Result<Self> {
        let n1 = group.first_stratum();
        let span = group.gradient_span();
        if a.len() != n1 || a.iter().any(|row| row.len() != n1) {
            return Err(Error::Config(format!(
                "diffusion block must be {n1} x {n1} for this group"
            )));
        }
        if b.len() != span {
            return Err(Error::Config(format!(
                "need {span} drift fields (first and second strata), got {}",
                b.len()
            )));
        }
        Ok(CoefficientSet {
            mode: CoefficientMode::AnisotropicDrift,
            n1,
            span,
            a: a.into_iter().flatten().collect(),
            b,
            a_scalar: None,
            positivity: None,
            beta,
        })
    }

    pub fn fokker_planck(group: &StratifiedGroup, a_scalar: ScalarField) -> Self {
        CoefficientSet {
            mode: CoefficientMode::FokkerPlanck,
            n1: group.first_stratum(),
            span: group.gradient_span(),
            a: Vec::new(),
            b: Vec::new(),
            a_scalar: Some(a_scalar),
            positivity: None,
            beta: 1.0,
        }
    }

    /// Named presets used by the experiment configs.
    pub fn preset(name: &str, group: &StratifiedGroup) -> Result<Self> {
        let n1 = group.first_stratum();
        match name {
            "constant" => {
                let mut a = vec![vec![ScalarField::constant(0.0); n1]; n1];
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] = ScalarField::constant(1.0);
                }
                let b = vec![ScalarField::constant(0.0); group.gradient_span()];
                CoefficientSet::anisotropic(group, a, b, 1.0)
            }
            "sin-perturbed" => {
                let mut a = vec![vec![ScalarField::constant(0.0); n1]; n1];
                a[0][0] = ScalarField::new(|x: &[f64]| 1.0 + 0.5 * x[0].sin());
                if n1 >= 2 {
                    a[1][1] = ScalarField::new(|x: &[f64]| 1.0 + 0.5 * x[1].cos());
                    let off = ScalarField::new(|x: &[f64]| 0.25 * (x[0] + x[1]).sin());
                    a[0][1] = off.clone();
                    a[1][0] = off;
                }
                for i in 2..n1 {
                    a[i][i] = ScalarField::constant(1.0);
                }
                let b = (0..group.gradient_span())
                    .map(|i| {
                        let axis = i.min(n1 - 1);
                        ScalarField::new(move |x: &[f64]| 0.25 * x[axis].cos())
                    })
                    .collect();
                CoefficientSet::anisotropic(group, a, b, 1.0)
            }
            "fokker-planck-demo" => {
                Ok(CoefficientSet::fokker_planck(group, ScalarField::new(|x: &[f64]| 2.0 + x[0].sin())))
            }
            other => Err(Error::Config(format!("unknown coefficient preset '{other}'"))),
        }
    }

    pub fn mode(&self) -> CoefficientMode {
        self.mode
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_positivity(&mut self, m: f64) {
        self.positivity = Some(m);
    }

    pub fn with_positivity(mut self, m: f64) -> Self {
        self.positivity = Some(m);
        self
    }

    /// The constant M; an error until fixed by `sample_reach` (or set
    /// explicitly).
    pub fn positivity(&self) -> Result<f64> {
        self.positivity.ok_or(Error::PositivityUnset)
    }

    /// The scalar coefficient of the Fokker-Planck mode.
    pub fn scalar(&self) -> Result<&ScalarField> {
        self.a_scalar
            .as_ref()
            .ok_or_else(|| Error::Config("coefficient set has no scalar field".into()))
    }

    pub fn drift_field(&self, i: usize) -> &ScalarField {
        &self.b[i]
    }

    /// Evaluate the drift b_i(x) with the second-stratum rescaling applied:
    /// btilde_i = b_i for i < n1, b_i / eps^2 for n1 <= i < n1 + n2.
    pub fn drift_rescaled(&self, drift: &[f64], i: usize, eps: f64) -> f64 {
        if i < self.n1 {
            drift[i]
        } else if i < self.span {
            drift[i] / (eps * eps)
        } else {
            1.0
        }
    }

    /// Cholesky data of the diffusion block at x.
    pub fn at(&self, x: &[f64]) -> Result<PointCoefficients> {
        if self.mode != CoefficientMode::AnisotropicDrift {
            return Err(Error::Config(
                "point coefficients are only defined in anisotropic-drift mode".into(),
            ));
        }
        let n1 = self.n1;
        let mut block = Matrix::zeros(n1);
        for i in 0..n1 {
            for j in 0..n1 {
                block[(i, j)] = self.a[i * n1 + j].eval(x);
            }
        }
        // Symmetry guard: the kernel construction assumes A = A^t.
        for i in 0..n1 {
            for j in (i + 1)..n1 {
                let gap = (block[(i, j)] - block[(j, i)]).abs();
                if gap > 1e-10 * block[(i, i)].abs().max(1.0) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "diffusion block is not symmetric at entry ({i}, {j})"
                    )));
                }
            }
        }
        let chol = block.cholesky()?;
        let chol_inv = chol.lower_triangular_inverse();
        let det_l: f64 = (0..n1).map(|i| chol[(i, i)]).product();
        let drift = self.b.iter().map(|f| f.eval(x)).collect();
        Ok(PointCoefficients { chol, chol_inv, det_a: det_l * det_l, drift })
    }

    /// Evaluate the diffusion entry a_ij at x.
    pub fn diffusion_entry(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        self.a[i * self.n1 + j].eval(x)
    }

    /// The affine weight a(x) = sum_i phi_i(exp^{-1} x) + M.
    pub fn weight(&self, point: &[f64]) -> Result<f64> {
        let m = self.positivity()?;
        Ok(point.iter().sum::<f64>() + m)
    }

    /// Validate that the diffusion block is SPD on a set of points.
    pub fn validate_spd(&self, points: impl Iterator<Item = Vec<f64>>) -> Result<()> {
        for p in points {
            self.at(&p)?;
        }
        Ok(())
    }
}

/// Result of sampling the reachable set of the rescaled kernel: the sampled
/// point cloud, the minimum of sum_i phi_i over it, and the resulting
/// positivity constant M = max(1, beta - min) + beta.
#[derive(Debug, Clone)]
pub struct ReachSample {
    pub m: f64,
    pub phi_min: f64,
    pub points: Vec<Vec<f64>>,
}

/// Sample the set {y exp(delta_eps L(y) exp^{-1}(z^{-1}))} over a grid of y
/// in the box and the kernel's quadrature nodes z (plus the corners of the
/// support cube, so affine reaches attain their true extremes), and pick M
/// so the weight stays >= beta on every sample.
pub fn sample_reach(
    group: &StratifiedGroup,
    kernel: &KernelJ,
    omega: &[(f64, f64)],
    coeffs: &CoefficientSet,
    eps_max: f64,
    beta: f64,
    samples_per_axis: usize,
) -> Result<ReachSample> {
    let dim = group.dim();
    if omega.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: omega.len() });
    }
    if omega.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::EmptyDomain("box has empty extent".into()));
    }
    if !(eps_max > 0.0) {
        return Err(Error::Config(format!("eps_max must be positive, got {eps_max}")));
    }
    let per_axis = samples_per_axis.max(2);

    // z-offsets: quadrature nodes plus the 2^dim support-cube corners.
    let mut offsets: Vec<Vec<f64>> = kernel.quadrature().map(|(t, _)| t.to_vec()).collect();
    let r = kernel.radius();
    for corner in 0..(1usize << dim) {
        offsets.push(
            (0..dim)
                .map(|axis| if corner >> axis & 1 == 1 { r } else { -r })
                .collect(),
        );
    }

    let mut grid_idx = vec![0usize; dim];
    let grid_total = per_axis.pow(dim as u32);
    let mut points = Vec::with_capacity(grid_total * offsets.len());
    let mut phi_min = f64::INFINITY;
    let mut scratch = vec![0.0; dim];
    for _ in 0..grid_total {
        let y: Vec<f64> = grid_idx
            .iter()
            .zip(omega)
            .map(|(&i, (lo, hi))| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
            .collect();
        let pc = coeffs.at(&y)?;
        let n1 = pc.chol.dim();
        for t in &offsets {
            // s = -delta_eps (L t) with L the block factor extended by the
            // identity on the upper strata.
            for i in 0..dim {
                let lt = if i < n1 {
                    (0..n1).map(|k| pc.chol[(i, k)] * t[k]).sum::<f64>()
                } else {
                    t[i]
                };
                scratch[i] = -eps_max.powi(group.weight(i) as i32) * lt;
            }
            let point = group.multiply(&y, &scratch)?;
            let phi: f64 = point.iter().sum();
            if phi < phi_min {
                phi_min = phi;
            }
            points.push(point);
        }
        for axis in (0..dim).rev() {
            grid_idx[axis] += 1;
            if grid_idx[axis] < per_axis {
                break;
            }
            grid_idx[axis] = 0;
        }
    }

    let m = (1.0f64).max(beta - phi_min) + beta;
    Ok(ReachSample { m, phi_min, points })
}
