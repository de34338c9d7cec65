//! Pointwise evaluation of the rescaled nonlocal operators and their local
//! limits.
//!
//! Three nonlocal operators act on a scalar field u at scale eps:
//!
//! * convolution diffusion: eps^{-2} int [u(x delta_eps(y^{-1})) - u(x)] J(y) dy,
//!   which approaches (C(J)/2) times the sub-Laplacian;
//! * drift-diffusion kernel operator: the anisotropic kernel built from the
//!   Cholesky factor of the diffusion block, the rescaled drift matrix and
//!   the affine weight; it approaches sum a_ij X_i X_j + sum b_i X_i;
//! * Fokker-Planck operator: 2/(C(J) eps^{Q+2}) int J(delta_{1/eps} y^{-1}x)
//!   [a(y)u(y) - a(x)u(x)] dy, approaching sum_i X_i X_i (a u).
//!
//! The drift-diffusion operator is integrated in the transformed variable
//! z = exp(L^{-1}(x) exp^{-1}(delta_{1/eps} y^{-1}x)), where the kernel
//! factor collapses to J(z) and the weight becomes affine in the node
//! coordinates. The untransformed kernel is exposed as `kernel_value` and a
//! direct y-space quadrature as `apply_drift_diffusion_direct` so the two
//! routes can be cross-checked against each other.

use crate::coeffs::{CoefficientSet, PointCoefficients};
use crate::error::{Error, Result};
use crate::group::{ScalarField, StratifiedGroup};
use crate::kernel::KernelJ;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("scale parameter must be positive, got {eps}")));
    }
    Ok(())
}

/// Offset coordinates of delta_eps(z^{-1}) for node coordinates t of z.
#[inline]
pub(crate) fn dilated_offset(group: &StratifiedGroup, eps: f64, t: &[f64], out: &mut [f64]) {
    for (i, v) in t.iter().enumerate() {
        out[i] = -eps.powi(group.weight(i) as i32) * v;
    }
}

/// Offset coordinates of delta_eps(L(x) t) negated, with L the Cholesky
/// factor extended by the identity on upper strata.
#[inline]
pub(crate) fn dilated_chol_offset(
    group: &StratifiedGroup,
    eps: f64,
    pc: &PointCoefficients,
    t: &[f64],
    out: &mut [f64],
) {
    let n1 = pc.chol.dim();
    for i in 0..t.len() {
        let lt = if i < n1 {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += pc.chol[(i, k)] * t[k];
            }
            acc
        } else {
            t[i]
        };
        out[i] = -eps.powi(group.weight(i) as i32) * lt;
    }
}

/// The affine weight of the transformed drift-diffusion integrand:
/// M - (M/2) sum_j eps^{lambda_j} btilde_j(x) sum_h l*_{hj}(x) t_h.
#[inline]
pub(crate) fn drift_weight(
    group: &StratifiedGroup,
    cs: &CoefficientSet,
    pc: &PointCoefficients,
    m: f64,
    eps: f64,
    t: &[f64],
) -> f64 {
    let n1 = pc.chol.dim();
    let mut acc = 0.0;
    for j in 0..t.len() {
        let lstar_t = if j < n1 {
            // Column j of the lower-triangular inverse.
            let mut s = 0.0;
            for h in j..n1 {
                s += pc.chol_inv[(h, j)] * t[h];
            }
            s
        } else {
            t[j]
        };
        let btilde = cs.drift_rescaled(&pc.drift, j, eps);
        acc += eps.powi(group.weight(j) as i32) * btilde * lstar_t;
    }
    m - 0.5 * m * acc
}

/// Rescaled convolution diffusion at x.
pub fn apply_convolution_diffusion(
    group: &StratifiedGroup,
    kernel: &KernelJ,
    u: &ScalarField,
    x: &[f64],
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    let ux = u.eval(x);
    let mut offset = vec![0.0; group.dim()];
    let mut point = vec![0.0; group.dim()];
    let mut acc = 0.0;
    for (t, jw) in kernel.quadrature() {
        if jw == 0.0 {
            continue;
        }
        dilated_offset(group, eps, t, &mut offset);
        group.multiply_unchecked(x, &offset, &mut point);
        acc += jw * (u.eval(&point) - ux);
    }
    Ok(acc / (eps * eps))
}

/// The untransformed drift-diffusion kernel value K_eps(x, y).
pub fn kernel_value(
    group: &StratifiedGroup,
    kernel: &KernelJ,
    cs: &CoefficientSet,
    x: &[f64],
    y: &[f64],
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    let m = cs.positivity()?;
    let pc = cs.at(x)?;
    let n = group.dim();
    let n1 = pc.chol.dim();
    let span = group.gradient_span();

    // xi = exp^{-1}(y^{-1} x) in coordinates.
    let xi = group.multiply(&group.inverse(y), x)?;

    // Kernel factor: J at L^{-1} delta_{1/eps} xi.
    let mut v = vec![0.0; n];
    for i in 0..n {
        v[i] = xi[i] / eps.powi(group.weight(i) as i32);
    }
    let mut jarg = vec![0.0; n];
    for i in 0..n {
        jarg[i] = if i < n1 {
            (0..=i).map(|k| pc.chol_inv[(i, k)] * v[k]).sum::<f64>()
        } else {
            v[i]
        };
    }
    let j_factor = kernel.density(&jarg);
    if j_factor == 0.0 {
        return Ok(0.0);
    }

    // Weight factor: a((exp(E(x) xi))^{-1}) = M - sum_i (E(x) xi)_i with
    // E = (M/2) W A^{-1} and A^{-1} = L^{-t} L^{-1} extended by the identity.
    let mut q = vec![0.0; n];
    for (i, qi) in q.iter_mut().enumerate() {
        *qi = if i < n1 {
            let mut acc = 0.0;
            // (L^{-t} L^{-1} xi)_i = sum_k l*_{ki} (L^{-1} xi)_k.
            for k in i..n1 {
                let linv_ki = pc.chol_inv[(k, i)];
                let mut inner = 0.0;
                for j in 0..=k {
                    inner += pc.chol_inv[(k, j)] * xi[j];
                }
                acc += linv_ki * inner;
            }
            acc
        } else {
            xi[i]
        };
    }
    let mut e_sum = 0.0;
    for (i, qi) in q.iter().enumerate() {
        let btilde = if i < span { cs.drift_rescaled(&pc.drift, i, eps) } else { 1.0 };
        e_sum += 0.5 * m * btilde * qi;
    }
    let a_factor = m - e_sum;

    let c_x = 2.0 / (kernel.second_moment() * m * pc.det_a.sqrt());
    let q_hom = group.homogeneous_dimension() as i32;
    Ok(c_x / eps.powi(q_hom + 2) * a_factor * j_factor)
}

/// Drift-diffusion operator at x: quadrature of the transformed integrand.
pub fn apply_drift_diffusion(
    group: &StratifiedGroup,
    kernel: &KernelJ,
    cs: &CoefficientSet,
    u: &ScalarField,
    x: &[f64],
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    let m = cs.positivity()?;
    let pc = cs.at(x)?;
    let ux = u.eval(x);
    let mut offset = vec![0.0; group.dim()];
    let mut point = vec![0.0; group.dim()];
    let mut acc = 0.0;
    for (t, jw) in kernel.quadrature() {
        if jw == 0.0 {
            continue;
        }
        dilated_chol_offset(group, eps, &pc, t, &mut offset);
        group.multiply_unchecked(x, &offset, &mut point);
        let w = drift_weight(group, cs, &pc, m, eps, t);
        acc += jw * w * (u.eval(&point) - ux);
    }
    Ok(2.0 / (eps * eps * kernel.second_moment() * m) * acc)
}

/// Drift-diffusion operator by direct y-space quadrature of
/// int K_eps(x, y) (u(y) - u(x)) dy over the image of the kernel support;
/// the integrand evaluates the untransformed `kernel_value`. Used to
/// cross-validate the change of variables.
pub fn apply_drift_diffusion_direct(
    group: &StratifiedGroup,
    kernel: &KernelJ,
    cs: &CoefficientSet,
    u: &ScalarField,
    x: &[f64],
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    let pc = cs.at(x)?;
    let n1 = pc.chol.dim();
    let det_l: f64 = (0..n1).map(|i| pc.chol[(i, i)]).product();
    let ux = u.eval(x);
    let q_hom = group.homogeneous_dimension() as i32;
    let measure = eps.powi(q_hom) * det_l;
    let mut offset = vec![0.0; group.dim()];
    let mut y = vec![0.0; group.dim()];
    let mut acc = 0.0;
    for (t, gw) in kernel.raw_quadrature() {
        dilated_chol_offset(group, eps, &pc, t, &mut offset);
        group.multiply_unchecked(x, &offset, &mut y);
        let k = kernel_value(group, kernel, cs, x, &y, eps)?;
        if k != 0.0 {
            acc += gw * measure * k * (u.eval(&y) - ux);
        }
    }
    Ok(acc)
}

/// Fokker-Planck nonlocal operator at x.
pub fn apply_fokker_planck(
    group: &StratifiedGroup,
    kernel: &KernelJ,
    a: &ScalarField,
    u: &ScalarField,
    x: &[f64],
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    let axux = a.eval(x) * u.eval(x);
    let mut offset = vec![0.0; group.dim()];
    let mut point = vec![0.0; group.dim()];
    let mut acc = 0.0;
    for (t, jw) in kernel.quadrature() {
        if jw == 0.0 {
            continue;
        }
        dilated_offset(group, eps, t, &mut offset);
        group.multiply_unchecked(x, &offset, &mut point);
        acc += jw * (a.eval(&point) * u.eval(&point) - axux);
    }
    Ok(2.0 / (kernel.second_moment() * eps * eps) * acc)
}

/// Local drift-diffusion operator: sum a_ij X_i X_j v + sum b_i X_i v.
pub fn local_drift_diffusion(
    group: &StratifiedGroup,
    cs: &CoefficientSet,
    v: &ScalarField,
    x: &[f64],
) -> Result<f64> {
    let n1 = group.first_stratum();
    let span = group.gradient_span();
    let mut acc = 0.0;
    for i in 0..n1 {
        for j in 0..n1 {
            let a = cs.diffusion_entry(i, j, x);
            if a != 0.0 {
                acc += a * group.second_order_apply(i, j, v, x, None)?;
            }
        }
    }
    for i in 0..span {
        let b = cs.drift_field(i).eval(x);
        if b != 0.0 {
            acc += b * group.vector_field_apply(i, v, x, None)?;
        }
    }
    Ok(acc)
}

/// Local Fokker-Planck operator: sum_{i < n1} X_i X_i (a v).
pub fn local_fokker_planck(
    group: &StratifiedGroup,
    a: &ScalarField,
    v: &ScalarField,
    x: &[f64],
) -> Result<f64> {
    // The product can have twice the degree of its factors, so it never
    // inherits the large polynomial differencing step.
    let product = {
        let (a, v) = (a.clone(), v.clone());
        ScalarField::new(move |y: &[f64]| a.eval(y) * v.eval(y))
    };
    sub_laplacian(group, &product, x)
}

/// Sub-Laplacian: sum_{i < n1} X_i X_i v.
pub fn sub_laplacian(group: &StratifiedGroup, v: &ScalarField, x: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..group.first_stratum() {
        acc += group.second_order_apply(i, i, v, x, None)?;
    }
    Ok(acc)
}
