//! Stratified (Carnot) group arithmetic in exponential coordinates of the
//! first kind.
//!
//! A group is described by its strata sizes and the sparse structure
//! constants c_ijk with [X_i, X_j] = sum_k c_ijk X_k. For step <= 2 the
//! Baker-Campbell-Hausdorff series truncates exactly, so the group law is
//! the polynomial map x*y = x + y + [x,y]/2. Coordinate j carries the weight
//! lambda_j = k of its stratum, the dilation scales coordinate j by
//! r^lambda_j, and the homogeneous dimension is Q = sum_k k*n_k.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Sparse structure constant: [X_i, X_j] has component `c` along X_k.
/// Indices are 0-based; only i < j entries are stored (antisymmetry fills
/// in the rest).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketTerm {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GroupKind {
    Abelian,
    Heisenberg,
    Custom,
}

#[derive(Debug, Clone)]
pub struct StratifiedGroup {
    dim: usize,
    strata: Vec<usize>,
    /// Coordinate weight lambda_j (stratum number, starting at 1).
    weights: Vec<u32>,
    brackets: Vec<BracketTerm>,
    q: u32,
    kind: GroupKind,
}

impl StratifiedGroup {
    /// Build a group from strata sizes and structure constants (0-based,
    /// i < j). Validates antisymmetry (implied by storage), the grading
    /// lambda_k = lambda_i + lambda_j and the Jacobi identity.
    pub fn new(strata: Vec<usize>, brackets: Vec<BracketTerm>) -> Result<Self> {
        if strata.is_empty() || strata.iter().any(|&s| s == 0) {
            return Err(Error::InvalidGroup("strata sizes must be positive".into()));
        }
        let dim: usize = strata.iter().sum();
        let mut weights = Vec::with_capacity(dim);
        for (k, &size) in strata.iter().enumerate() {
            weights.extend(std::iter::repeat(k as u32 + 1).take(size));
        }
        let q = weights.iter().sum();

        let mut seen = std::collections::HashSet::new();
        for t in &brackets {
            if t.i >= dim || t.j >= dim || t.k >= dim {
                return Err(Error::InvalidGroup(format!(
                    "structure constant ({}, {}, {}) out of range for dimension {dim}",
                    t.i, t.j, t.k
                )));
            }
            if t.i >= t.j {
                return Err(Error::InvalidGroup(
                    "store structure constants with i < j; antisymmetry supplies the rest".into(),
                ));
            }
            if !seen.insert((t.i, t.j, t.k)) {
                return Err(Error::InvalidGroup(format!(
                    "duplicate structure constant ({}, {}, {})",
                    t.i, t.j, t.k
                )));
            }
            if weights[t.k] != weights[t.i] + weights[t.j] {
                return Err(Error::InvalidGroup(format!(
                    "grading violated: [V_{}, V_{}] cannot meet V_{}",
                    weights[t.i], weights[t.j], weights[t.k]
                )));
            }
            if !t.c.is_finite() {
                return Err(Error::InvalidGroup("non-finite structure constant".into()));
            }
        }

        let kind = if brackets.is_empty() {
            GroupKind::Abelian
        } else if strata == [2, 1]
            && brackets.len() == 1
            && brackets[0] == (BracketTerm { i: 0, j: 1, k: 2, c: 1.0 })
        {
            GroupKind::Heisenberg
        } else {
            GroupKind::Custom
        };

        let group = StratifiedGroup { dim, strata, weights, brackets, q, kind };
        group.check_jacobi()?;
        Ok(group)
    }

    /// Abelian R^d: one stratum, no brackets.
    pub fn abelian(d: usize) -> Self {
        StratifiedGroup::new(vec![d], Vec::new()).expect("abelian group is always valid")
    }

    /// First Heisenberg group H^1: strata (2, 1), [X_1, X_2] = X_3, Q = 4.
    pub fn heisenberg() -> Self {
        StratifiedGroup::new(vec![2, 1], vec![BracketTerm { i: 0, j: 1, k: 2, c: 1.0 }])
            .expect("Heisenberg group is always valid")
    }

    fn check_jacobi(&self) -> Result<()> {
        let n = self.dim;
        let c = |i: usize, j: usize, k: usize| -> f64 { self.constant(i, j, k) };
        for i in 0..n {
            for j in (i + 1)..n {
                for l in (j + 1)..n {
                    for target in 0..n {
                        let mut sum = 0.0;
                        for m in 0..n {
                            sum += c(i, j, m) * c(m, l, target);
                            sum += c(j, l, m) * c(m, i, target);
                            sum += c(l, i, m) * c(m, j, target);
                        }
                        if sum.abs() > 1e-12 {
                            return Err(Error::InvalidGroup(format!(
                                "Jacobi identity violated on basis triple ({i}, {j}, {l})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// c_ijk with antisymmetry applied.
    pub fn constant(&self, i: usize, j: usize, k: usize) -> f64 {
        for t in &self.brackets {
            if t.k == k {
                if t.i == i && t.j == j {
                    return t.c;
                }
                if t.i == j && t.j == i {
                    return -t.c;
                }
            }
        }
        0.0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> usize {
        self.strata.len()
    }

    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    /// Coordinate weight lambda_j.
    pub fn weight(&self, j: usize) -> u32 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    /// Homogeneous dimension Q = sum_k k n_k.
    pub fn homogeneous_dimension(&self) -> u32 {
        self.q
    }

    /// Size of the first stratum (number of horizontal directions).
    pub fn first_stratum(&self) -> usize {
        self.strata[0]
    }

    /// n_1 + n_2: the coordinates that enter first-order Taylor data.
    pub fn gradient_span(&self) -> usize {
        self.strata[0] + self.strata.get(1).copied().unwrap_or(0)
    }

    pub fn brackets(&self) -> &[BracketTerm] {
        &self.brackets
    }

    pub fn identity(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Lie bracket of coordinate vectors: [x, y]_k = sum_{i<j} c_ijk (x_i y_j - x_j y_i).
    pub fn bracket(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for t in &self.brackets {
            out[t.k] += t.c * (x[t.i] * y[t.j] - x[t.j] * y[t.i]);
        }
        out
    }

    /// Group product in exponential coordinates; exact for step <= 2.
    pub fn multiply(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        if self.step() > 2 {
            return Err(Error::UnsupportedStep(self.step()));
        }
        let mut out = vec![0.0; self.dim];
        self.multiply_unchecked(x, y, &mut out);
        Ok(out)
    }

    /// Hot-path product without validation; callers guarantee step <= 2 and
    /// matching dimensions.
    #[inline]
    pub fn multiply_unchecked(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self.kind {
            GroupKind::Abelian => {
                for i in 0..self.dim {
                    out[i] = x[i] + y[i];
                }
            }
            GroupKind::Heisenberg => {
                out[0] = x[0] + y[0];
                out[1] = x[1] + y[1];
                out[2] = x[2] + y[2] + 0.5 * (x[0] * y[1] - x[1] * y[0]);
            }
            GroupKind::Custom => {
                for i in 0..self.dim {
                    out[i] = x[i] + y[i];
                }
                for t in &self.brackets {
                    out[t.k] += 0.5 * t.c * (x[t.i] * y[t.j] - x[t.j] * y[t.i]);
                }
            }
        }
    }

    /// In exponential coordinates of the first kind the inverse is negation.
    pub fn inverse(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| -v).collect()
    }

    /// Anisotropic dilation: coordinate j scales by r^lambda_j.
    pub fn dilate(&self, r: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if !(r > 0.0) {
            return Err(Error::InvalidDilation(r));
        }
        Ok(self.dilate_unchecked(r, x))
    }

    #[inline]
    pub fn dilate_unchecked(&self, r: f64, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.weights)
            .map(|(v, &lam)| v * r.powi(lam as i32))
            .collect()
    }

    /// Homogeneous norm |x| = 1/r(x) where ||delta_{r} x||_2 = 1, so that
    /// |delta_s x| = s |x|. Solved by bracketing plus Newton to relative
    /// tolerance 1e-12.
    pub fn homogeneous_norm(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm2 = |r: f64| -> f64 {
            x.iter()
                .zip(&self.weights)
                .map(|(v, &lam)| {
                    let s = v * r.powi(lam as i32);
                    s * s
                })
                .sum::<f64>()
        };
        if norm2(1.0) == 0.0 {
            return Ok(0.0);
        }
        // Bracket the root of ||delta_r x|| = 1: the map is strictly
        // increasing in r from 0 to infinity.
        let mut lo = 1.0;
        let mut hi = 1.0;
        while norm2(lo) >= 1.0 {
            lo *= 0.5;
            if lo < 1e-300 {
                return Ok(f64::INFINITY);
            }
        }
        while norm2(hi) <= 1.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Ok(0.0);
            }
        }
        let mut r = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g: f64 = norm2(r).sqrt() - 1.0;
            if g > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            // Newton step on ||delta_r x|| - 1, clipped to the bracket.
            let dg: f64 = x
                .iter()
                .zip(&self.weights)
                .map(|(v, &lam)| {
                    let lamf = lam as f64;
                    lamf * v * v * r.powi(2 * lam as i32 - 1)
                })
                .sum::<f64>()
                / norm2(r).sqrt();
            let mut next = r - g / dg;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() <= 1e-12 * r {
                r = next;
                break;
            }
            r = next;
        }
        Ok(1.0 / r)
    }

    /// Frame of left-invariant vector fields in coordinates: column i of the
    /// returned matrix is d/dt multiply(x, t e_i) at t = 0, which for step
    /// <= 2 is e_i + bracket(x, e_i)/2 exactly.
    pub fn left_frame(&self, x: &[f64]) -> Matrix {
        let mut m = Matrix::identity(self.dim);
        for t in &self.brackets {
            // bracket(x, e_i)_k = sum_j c_jik x_j; expand from stored i<j terms.
            m[(t.k, t.j)] += 0.5 * t.c * x[t.i];
            m[(t.k, t.i)] -= 0.5 * t.c * x[t.j];
        }
        m
    }

    /// Derivative of Jacobian entries: d/dx_p of left_frame(x)[(q, i)], a
    /// constant c_pik/2 for step <= 2 groups.
    pub fn frame_gradient(&self, p: usize, q: usize, i: usize) -> f64 {
        let mut v = 0.0;
        for t in &self.brackets {
            if t.k == q {
                if t.i == p && t.j == i {
                    v += 0.5 * t.c;
                } else if t.i == i && t.j == p {
                    v -= 0.5 * t.c;
                }
            }
        }
        v
    }

    fn scaled_basis_point(&self, i: usize, t: f64) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        e[i] = t;
        e
    }

    /// X_i f(x): central difference of t -> f(x exp(t X_i)) at t = 0.
    pub fn vector_field_apply(
        &self,
        i: usize,
        f: &ScalarField,
        x: &[f64],
        h: Option<f64>,
    ) -> Result<f64> {
        self.check_dim(x)?;
        if i >= self.dim {
            return Err(Error::IndexOutOfRange { index: i, dim: self.dim });
        }
        let h = h.unwrap_or_else(|| f.smoothness().first_order_step(x));
        let plus = self.multiply(x, &self.scaled_basis_point(i, h))?;
        let minus = self.multiply(x, &self.scaled_basis_point(i, -h))?;
        Ok((f.eval(&plus) - f.eval(&minus)) / (2.0 * h))
    }

    /// X_i X_j f(x): mixed central difference of
    /// (t1, t2) -> f(x exp(t1 X_i) exp(t2 X_j)).
    pub fn second_order_apply(
        &self,
        i: usize,
        j: usize,
        f: &ScalarField,
        x: &[f64],
        h: Option<f64>,
    ) -> Result<f64> {
        self.check_dim(x)?;
        if i >= self.dim || j >= self.dim {
            return Err(Error::IndexOutOfRange { index: i.max(j), dim: self.dim });
        }
        let h = h.unwrap_or_else(|| f.smoothness().second_order_step(x));
        if i == j {
            let plus = self.multiply(x, &self.scaled_basis_point(i, h))?;
            let minus = self.multiply(x, &self.scaled_basis_point(i, -h))?;
            return Ok((f.eval(&plus) - 2.0 * f.eval(x) + f.eval(&minus)) / (h * h));
        }
        let corner = |s1: f64, s2: f64| -> Result<f64> {
            let a = self.multiply(x, &self.scaled_basis_point(i, s1))?;
            let b = self.multiply(&a, &self.scaled_basis_point(j, s2))?;
            Ok(f.eval(&b))
        };
        let pp = corner(h, h)?;
        let pm = corner(h, -h)?;
        let mp = corner(-h, h)?;
        let mm = corner(-h, -h)?;
        Ok((pp - pm - mp + mm) / (4.0 * h * h))
    }

    /// Taylor data of homogeneous degree 2 at x: value, X_i f for
    /// i < n_1 + n_2 and X_i X_j f for i, j < n_1.
    pub fn taylor2(&self, f: &ScalarField, x: &[f64]) -> Result<Taylor2> {
        self.check_dim(x)?;
        let span = self.gradient_span();
        let n1 = self.first_stratum();
        let mut gradient = Vec::with_capacity(span);
        for i in 0..span {
            gradient.push(self.vector_field_apply(i, f, x, None)?);
        }
        let mut hessian = Matrix::zeros(n1);
        for i in 0..n1 {
            for j in 0..n1 {
                hessian[(i, j)] = self.second_order_apply(i, j, f, x, None)?;
            }
        }
        Ok(Taylor2 { value: f.eval(x), gradient, hessian })
    }

    /// Finite-difference Jacobian of y -> x * y at y; its determinant is 1
    /// in exponential coordinates (the group-side statement that Lebesgue
    /// measure is a biinvariant Haar measure). For step <= 2 the product is
    /// affine in y, so central differences with a large step are exact.
    pub fn left_translation_jacobian(&self, x: &[f64], y: &[f64]) -> Result<Matrix> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let h = 0.5;
        let mut m = Matrix::zeros(self.dim);
        for j in 0..self.dim {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[j] += h;
            ym[j] -= h;
            let fp = self.multiply(x, &yp)?;
            let fm = self.multiply(x, &ym)?;
            for i in 0..self.dim {
                m[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(m)
    }
}

/// Taylor coefficients of homogeneous degree 2.
#[derive(Debug, Clone)]
pub struct Taylor2 {
    pub value: f64,
    /// X_i f(x) for i < n_1 + n_2.
    pub gradient: Vec<f64>,
    /// X_i X_j f(x) for i, j < n_1.
    pub hessian: Matrix,
}

impl Taylor2 {
    /// Evaluate the degree-2 model at exponential offset t (length n).
    pub fn predict(&self, t: &[f64]) -> f64 {
        let mut v = self.value;
        for (i, g) in self.gradient.iter().enumerate() {
            v += t[i] * g;
        }
        let n1 = self.hessian.dim();
        for i in 0..n1 {
            for j in 0..n1 {
                v += 0.5 * t[i] * t[j] * self.hessian[(i, j)];
            }
        }
        v
    }
}

/// Declared smoothness of a field; picks the finite-difference step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothness {
    #[default]
    Smooth,
    /// Low-degree polynomial: differences along exponential curves have no
    /// truncation error, so a large step minimizes rounding.
    Polynomial,
}

impl Smoothness {
    pub fn first_order_step(self, x: &[f64]) -> f64 {
        let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        match self {
            Smoothness::Smooth => f64::EPSILON.cbrt() * scale,
            Smoothness::Polynomial => 1e-2 * scale,
        }
    }

    pub fn second_order_step(self, x: &[f64]) -> f64 {
        let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        match self {
            Smoothness::Smooth => f64::EPSILON.powf(0.25) * scale,
            Smoothness::Polynomial => 1e-2 * scale,
        }
    }
}

/// A deterministic scalar field on the group, evaluated in exponential
/// coordinates.
#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    smoothness: Smoothness,
}

impl ScalarField {
    pub fn new<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        ScalarField { eval: Arc::new(f), smoothness: Smoothness::Smooth }
    }

    pub fn polynomial<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        ScalarField { eval: Arc::new(f), smoothness: Smoothness::Polynomial }
    }

    pub fn constant(c: f64) -> Self {
        ScalarField { eval: Arc::new(move |_| c), smoothness: Smoothness::Polynomial }
    }

    /// Coordinate functional eta_i.
    pub fn coordinate(i: usize) -> Self {
        ScalarField { eval: Arc::new(move |x: &[f64]| x[i]), smoothness: Smoothness::Polynomial }
    }

    pub fn with_smoothness(mut self, s: Smoothness) -> Self {
        self.smoothness = s;
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField").field("smoothness", &self.smoothness).finish()
    }
}

/// A time-dependent scalar field g(x, t), used for exterior/boundary data.
#[derive(Clone)]
pub struct TimeField {
    eval: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
}

impl TimeField {
    pub fn new<F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        TimeField { eval: Arc::new(f) }
    }

    pub fn constant(c: f64) -> Self {
        TimeField::new(move |_, _| c)
    }

    pub fn stationary(f: ScalarField) -> Self {
        TimeField::new(move |x, _| f.eval(x))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(x, t)
    }

    /// Freeze time: the spatial field g(., t).
    pub fn at_time(&self, t: f64) -> ScalarField {
        let me = self.clone();
        ScalarField::new(move |x| me.eval(x, t))
    }
}

impl std::fmt::Debug for TimeField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TimeField")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Oracle for the Heisenberg product: 3x3 upper unitriangular matrices
    /// with entries (1, a, c + ab/2; 0, 1, b; 0, 0, 1), multiplied exactly,
    /// then mapped back through the matrix logarithm log U = N - N^2/2.
    fn heisenberg_matrix_product(x: &[f64], y: &[f64]) -> Vec<f64> {
        let to_mat = |p: &[f64]| -> [[f64; 3]; 3] {
            [
                [1.0, p[0], p[2] + 0.5 * p[0] * p[1]],
                [0.0, 1.0, p[1]],
                [0.0, 0.0, 1.0],
            ]
        };
        let a = to_mat(x);
        let b = to_mat(y);
        let mut u = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    u[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        // log(I + N) = N - N^2/2 for strictly upper-triangular N.
        let n12 = u[0][1];
        let n23 = u[1][2];
        let n13 = u[0][2];
        vec![n12, n23, n13 - 0.5 * n12 * n23]
    }

    /// Pure-bisection oracle for the homogeneous norm.
    fn norm_bisection_oracle(g: &StratifiedGroup, x: &[f64]) -> f64 {
        let norm = |r: f64| -> f64 {
            x.iter()
                .zip(g.weights())
                .map(|(v, &lam)| (v * r.powi(lam as i32)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        if norm(1.0) == 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (1e-12, 1e12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        1.0 / (0.5 * (lo + hi))
    }

    fn rng_points(g: &StratifiedGroup, seed: u64, count: usize) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| (0..g.dim()).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect()
    }

    #[test]
    fn abelian_product_is_addition() {
        let g = StratifiedGroup::abelian(2);
        let p = g.multiply(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(p, vec![4.0, 6.0]);
    }

    #[test]
    fn heisenberg_product_matches_matrix_oracle() {
        let g = StratifiedGroup::heisenberg();
        let p = g.multiply(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 1.0, 0.5]);

        for (x, y) in rng_points(&g, 7, 200).iter().zip(rng_points(&g, 8, 200).iter()) {
            let ours = g.multiply(x, y).unwrap();
            let oracle = heisenberg_matrix_product(x, y);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{ours:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn inverse_is_negation_and_cancels() {
        let g = StratifiedGroup::heisenberg();
        assert_eq!(g.inverse(&[1.0, 2.0, 3.0]), vec![-1.0, -2.0, -3.0]);
        let x = vec![1.0, 1.0, 0.5];
        let p = g.multiply(&x, &g.inverse(&x)).unwrap();
        for v in p {
            assert_eq!(v, 0.0);
        }
        let zero = g.identity();
        assert_eq!(g.inverse(&zero), zero);
    }

    #[test]
    fn dilation_scales_by_stratum() {
        let g = StratifiedGroup::heisenberg();
        let d = g.dilate(2.0, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d, vec![2.0, 2.0, 4.0]);
        let x = vec![0.3, -0.2, 0.7];
        let same = g.dilate(1.0, &x).unwrap();
        assert_eq!(same, x);
        assert!(g.dilate(0.0, &x).is_err());
        assert!(g.dilate(-1.0, &x).is_err());
    }

    #[test]
    fn dilation_one_parameter_law() {
        use rand::{Rng, SeedableRng};
        let g = StratifiedGroup::heisenberg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for x in rng_points(&g, 4, 100) {
            let r: f64 = rng.random_range(0.1..10.0);
            let s: f64 = rng.random_range(0.1..10.0);
            let a = g.dilate(r, &g.dilate(s, &x).unwrap()).unwrap();
            let b = g.dilate(r * s, &x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dilation_is_group_automorphism() {
        use rand::{Rng, SeedableRng};
        let g = StratifiedGroup::heisenberg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for (x, y) in rng_points(&g, 1, 300).iter().zip(rng_points(&g, 2, 300).iter()) {
            let r: f64 = rng.random_range(0.1..10.0);
            let lhs = g.dilate(r, &g.multiply(x, y).unwrap()).unwrap();
            let rhs = g.multiply(&g.dilate(r, x).unwrap(), &g.dilate(r, y).unwrap()).unwrap();
            for (u, v) in lhs.iter().zip(&rhs) {
                assert!((u - v).abs() < 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn homogeneous_norm_examples() {
        let g = StratifiedGroup::heisenberg();
        // First stratum only: the norm is Euclidean.
        let x = vec![0.6, 0.8, 0.0];
        assert!((g.homogeneous_norm(&x).unwrap() - 1.0).abs() < 1e-12);
        // Pure second stratum: ||delta_r x|| = r^2 |x3|.
        assert!((g.homogeneous_norm(&[0.0, 0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((g.homogeneous_norm(&[0.0, 0.0, 4.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(g.homogeneous_norm(&g.identity()).unwrap(), 0.0);
        assert!(g.homogeneous_norm(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn homogeneous_norm_matches_bisection_oracle() {
        let g = StratifiedGroup::heisenberg();
        for x in rng_points(&g, 11, 50) {
            let a = g.homogeneous_norm(&x).unwrap();
            let b = norm_bisection_oracle(&g, &x);
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn homogeneous_norm_scaling_and_inverse() {
        use rand::{Rng, SeedableRng};
        let g = StratifiedGroup::heisenberg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for x in rng_points(&g, 14, 100) {
            let n = g.homogeneous_norm(&x).unwrap();
            let s: f64 = rng.random_range(0.1..10.0);
            let ns = g.homogeneous_norm(&g.dilate(s, &x).unwrap()).unwrap();
            assert!((ns - s * n).abs() < 1e-10 * (s * n).max(1e-30));
            let ni = g.homogeneous_norm(&g.inverse(&x)).unwrap();
            assert!((ni - n).abs() < 1e-10 * n.max(1e-30));
        }
    }

    #[test]
    fn vector_field_coordinate_derivatives() {
        let g = StratifiedGroup::abelian(2);
        let f = ScalarField::coordinate(0);
        for x in rng_points(&g, 21, 20) {
            let d = g.vector_field_apply(0, &f, &x, None).unwrap();
            assert!((d - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vector_field_heisenberg_closed_forms() {
        // X_1 eta_3 = -x2/2, X_2 eta_3 = x1/2, X_3 eta_3 = 1.
        let g = StratifiedGroup::heisenberg();
        let f = ScalarField::coordinate(2);
        for x in rng_points(&g, 22, 30) {
            let d1 = g.vector_field_apply(0, &f, &x, None).unwrap();
            let d2 = g.vector_field_apply(1, &f, &x, None).unwrap();
            let d3 = g.vector_field_apply(2, &f, &x, None).unwrap();
            assert!((d1 + 0.5 * x[1]).abs() < 1e-8);
            assert!((d2 - 0.5 * x[0]).abs() < 1e-8);
            assert!((d3 - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn vector_field_is_linear() {
        use rand::{Rng, SeedableRng};
        let g = StratifiedGroup::heisenberg();
        let f1 = ScalarField::new(|x: &[f64]| (x[0] + 2.0 * x[2]).sin());
        let f2 = ScalarField::new(|x: &[f64]| x[1] * x[1] + x[0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for x in rng_points(&g, 32, 20) {
            let alpha: f64 = rng.random_range(-2.0..2.0);
            let beta: f64 = rng.random_range(-2.0..2.0);
            let combo = {
                let (f1, f2) = (f1.clone(), f2.clone());
                ScalarField::new(move |y: &[f64]| alpha * f1.eval(y) + beta * f2.eval(y))
            };
            for i in 0..3 {
                let lhs = g.vector_field_apply(i, &combo, &x, None).unwrap();
                let rhs = alpha * g.vector_field_apply(i, &f1, &x, None).unwrap()
                    + beta * g.vector_field_apply(i, &f2, &x, None).unwrap();
                assert!((lhs - rhs).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn second_order_mixed_partial() {
        let g = StratifiedGroup::abelian(2);
        let f = ScalarField::polynomial(|x: &[f64]| x[0] * x[1]);
        let d = g.second_order_apply(0, 1, &f, &[0.3, -0.7], None).unwrap();
        assert!((d - 1.0).abs() < 1e-10);
        let c = ScalarField::constant(4.0);
        assert!(g.second_order_apply(1, 1, &c, &[0.0, 0.0], None).unwrap().abs() < 1e-12);
    }

    #[test]
    fn commutator_recovers_structure_constants() {
        let g = StratifiedGroup::heisenberg();
        let f = ScalarField::coordinate(2);
        let x = [0.4, -0.3, 0.2];
        let xy = g.second_order_apply(0, 1, &f, &x, None).unwrap();
        let yx = g.second_order_apply(1, 0, &f, &x, None).unwrap();
        assert!((xy - yx - 1.0).abs() < 1e-6);
    }

    #[test]
    fn commutator_consistency_on_smooth_field() {
        let g = StratifiedGroup::heisenberg();
        let f = ScalarField::new(|x: &[f64]| (x[0] * x[1]).sin() + x[2] * x[2]);
        for x in rng_points(&g, 41, 10) {
            let x: Vec<f64> = x.iter().map(|v| v * 0.3).collect();
            for i in 0..3 {
                for j in 0..3 {
                    let lhs = g.second_order_apply(i, j, &f, &x, None).unwrap()
                        - g.second_order_apply(j, i, &f, &x, None).unwrap();
                    let mut rhs = 0.0;
                    for k in 0..3 {
                        let c = g.constant(i, j, k);
                        if c != 0.0 {
                            rhs += c * g.vector_field_apply(k, &f, &x, None).unwrap();
                        }
                    }
                    assert!((lhs - rhs).abs() < 1e-6, "i={i} j={j}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn taylor2_classic_cases() {
        let g = StratifiedGroup::abelian(1);
        let c = ScalarField::constant(7.0);
        let t = g.taylor2(&c, &[0.0]).unwrap();
        assert_eq!(t.value, 7.0);
        assert!(t.gradient[0].abs() < 1e-12);
        assert!(t.hessian[(0, 0)].abs() < 1e-10);

        let sq = ScalarField::polynomial(|x: &[f64]| x[0] * x[0]);
        let t = g.taylor2(&sq, &[0.0]).unwrap();
        assert!(t.value.abs() < 1e-14);
        assert!(t.gradient[0].abs() < 1e-10);
        assert!((t.hessian[(0, 0)] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn taylor2_heisenberg_vertical_coordinate() {
        let g = StratifiedGroup::heisenberg();
        let f = ScalarField::coordinate(2);
        let t = g.taylor2(&f, &g.identity()).unwrap();
        assert!(t.value.abs() < 1e-14);
        assert!(t.gradient[0].abs() < 1e-9);
        assert!(t.gradient[1].abs() < 1e-9);
        assert!((t.gradient[2] - 1.0).abs() < 1e-9);
        // X_1 X_2 eta_3 = 1/2 and X_2 X_1 eta_3 = -1/2: only the symmetric
        // part enters the degree-2 Taylor form, and it vanishes.
        assert!((t.hessian[(0, 1)] - 0.5).abs() < 1e-7);
        assert!((t.hessian[(1, 0)] + 0.5).abs() < 1e-7);
        for i in 0..2 {
            assert!(t.hessian[(i, i)].abs() < 1e-7);
            for j in 0..2 {
                assert!((t.hessian[(i, j)] + t.hessian[(j, i)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn taylor2_scaled_remainder_decays() {
        // epsilon^{-2} |f(x delta_eps y) - degree-2 model| must shrink by at
        // least a factor 0.75 per halving of epsilon.
        let g = StratifiedGroup::heisenberg();
        let f = ScalarField::new(|x: &[f64]| (x[0] + 0.5 * x[1]).sin() * (1.0 + x[2]).cos());
        let x = vec![0.2, -0.1, 0.3];
        let y = vec![0.7, 0.4, -0.5];
        let t2 = g.taylor2(&f, &x).unwrap();
        let remainder = |eps: f64| -> f64 {
            let dy = g.dilate(eps, &y).unwrap();
            let point = g.multiply(&x, &dy).unwrap();
            (f.eval(&point) - t2.predict(&dy)).abs() / (eps * eps)
        };
        let mut eps = 0.1;
        for _ in 0..4 {
            let here = remainder(eps);
            let half = remainder(eps * 0.5);
            assert!(half <= 0.75 * here + 1e-12, "eps={eps}: {here} -> {half}");
            eps *= 0.5;
        }
    }

    #[test]
    fn left_frame_matches_finite_differences() {
        let g = StratifiedGroup::heisenberg();
        for x in rng_points(&g, 51, 10) {
            let frame = g.left_frame(&x);
            let fd = g.left_translation_jacobian(&x, &g.identity()).unwrap();
            assert!(frame.max_abs_diff(&fd) < 1e-9);
            assert!((fd.det() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_structure_constants() {
        // so(3)-style constants on a single stratum violate the grading.
        let bad = StratifiedGroup::new(
            vec![3],
            vec![BracketTerm { i: 0, j: 1, k: 2, c: 1.0 }],
        );
        assert!(bad.is_err());

        // Grading-consistent but Jacobi-violating: strata (3, 1, 1) with
        // [X1,X2] = X4 and [X3,X4] = X5. The (X1,X2,X3) cycle gives
        // [[X1,X2],X3] = [X4,X3] = -X5 with no compensating terms.
        let bad2 = StratifiedGroup::new(
            vec![3, 1, 1],
            vec![
                BracketTerm { i: 0, j: 1, k: 3, c: 1.0 },
                BracketTerm { i: 2, j: 3, k: 4, c: 1.0 },
            ],
        );
        assert!(matches!(bad2, Err(Error::InvalidGroup(_))));
    }

    #[test]
    fn step_three_products_are_rejected() {
        // A valid step-3 algebra (filiform): [X1,X2]=X3, [X1,X3]=X4.
        let g = StratifiedGroup::new(
            vec![2, 1, 1],
            vec![
                BracketTerm { i: 0, j: 1, k: 2, c: 1.0 },
                BracketTerm { i: 0, j: 2, k: 3, c: 1.0 },
            ],
        )
        .unwrap();
        assert_eq!(g.step(), 3);
        assert_eq!(g.homogeneous_dimension(), 7);
        let x = vec![1.0, 0.0, 0.0, 0.0];
        match g.multiply(&x, &x) {
            Err(Error::UnsupportedStep(3)) => {}
            other => panic!("expected UnsupportedStep, got {other:?}"),
        }
    }

    #[test]
    fn homogeneous_dimension_formula() {
        assert_eq!(StratifiedGroup::abelian(3).homogeneous_dimension(), 3);
        assert_eq!(StratifiedGroup::heisenberg().homogeneous_dimension(), 4);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = StratifiedGroup::heisenberg();
        assert!(matches!(
            g.multiply(&[1.0, 2.0], &[0.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }
}
