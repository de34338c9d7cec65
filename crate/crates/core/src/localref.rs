//! Finite-difference reference solver for the local limit problems.
//!
//! The left-invariant fields are expanded through coordinate partials with
//! the analytic frame J(x) = I + B(x)/2 (exact for step <= 2), so
//!
//!   sum a_ij X_i X_j v + sum b_i X_i v
//!     = sum_pq D_pq(x) d_p d_q v + sum_q E_q(x) d_q v,
//!
//! with D = J_* A J_*^t restricted to the first stratum and E collecting the
//! drift plus the inner derivatives of the frame (which are constant for
//! step <= 2). Second derivatives use centered 3-point differences, crosses
//! the 4-point formula, first derivatives centered differences. This shares
//! no code path with the nonlocal solver on purpose: agreement between the
//! two is evidence, not tautology.

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::group::{ScalarField, StratifiedGroup, TimeField};
use crate::linalg::Matrix;
use crate::nonlocal::EvolutionState;

/// Which local equation is being integrated.
#[derive(Debug, Clone)]
pub enum LocalForm {
    /// v_t = sum a_ij X_i X_j v + sum b_i X_i v.
    DriftDiffusion(CoefficientSet),
    /// v_t = sum_i X_i X_i (a v).
    FokkerPlanck(ScalarField),
}

#[derive(Debug, Clone)]
pub struct LocalProblem {
    pub group: StratifiedGroup,
    pub grid: GridSpec,
    pub form: LocalForm,
    pub u0: ScalarField,
    pub g: TimeField,
    pub horizon: f64,
}

/// Frame coefficients per grid node: column i of `frame(node)` expresses
/// X_i through coordinate partials.
#[derive(Debug)]
pub struct StencilField {
    frames: Vec<Matrix>,
}

impl StencilField {
    pub fn frame(&self, flat: usize) -> &Matrix {
        &self.frames[flat]
    }
}

/// Analytic frames at every grid node.
pub fn build_stencils(group: &StratifiedGroup, grid: &GridSpec) -> StencilField {
    let frames = (0..grid.node_count())
        .map(|flat| group.left_frame(&grid.node_coords(flat)))
        .collect();
    StencilField { frames }
}

/// Precomputed explicit-Euler stepper for a local problem.
pub struct LocalSolver {
    problem: LocalProblem,
    interior: Vec<usize>,
    /// Second-order coefficients D_pq, row-major dim x dim per interior node.
    d: Vec<f64>,
    /// First-order coefficients E_q per interior node.
    e: Vec<f64>,
    /// Scalar coefficient at all nodes (Fokker-Planck: the stencil acts on
    /// the product a v).
    node_scale: Option<Vec<f64>>,
    pub dt_max: f64,
}

impl LocalSolver {
    pub fn new(problem: LocalProblem) -> Result<Self> {
        let grid = &problem.grid;
        let group = &problem.group;
        if grid.dim() != group.dim() {
            return Err(Error::DimensionMismatch { expected: group.dim(), got: grid.dim() });
        }
        if grid.interior_count() == 0 {
            return Err(Error::EmptyDomain("grid has no interior nodes".into()));
        }
        let stencils = build_stencils(group, grid);
        let dim = grid.dim();
        let n1 = group.first_stratum();
        let span = group.gradient_span();
        let interior = grid.interior_nodes();

        let mut d = vec![0.0; interior.len() * dim * dim];
        let mut e = vec![0.0; interior.len() * dim];
        let mut denom_max = 0.0f64;
        let h = grid.spacing().to_vec();
        for (node, &flat) in interior.iter().enumerate() {
            let x = grid.node_coords(flat);
            let frame = stencils.frame(flat);
            let dmat = &mut d[node * dim * dim..(node + 1) * dim * dim];
            let evec = &mut e[node * dim..(node + 1) * dim];
            match &problem.form {
                LocalForm::DriftDiffusion(cs) => {
                    for i in 0..n1 {
                        for j in 0..n1 {
                            let a = cs.diffusion_entry(i, j, &x);
                            if a == 0.0 {
                                continue;
                            }
                            for p in 0..dim {
                                let fpi = frame[(p, i)];
                                if fpi == 0.0 {
                                    continue;
                                }
                                for q in 0..dim {
                                    dmat[p * dim + q] += a * fpi * frame[(q, j)];
                                }
                                // Inner derivative of the frame: X_i acting
                                // on the coefficients of X_j.
                                for q in 0..dim {
                                    let grad = group.frame_gradient(p, q, j);
                                    if grad != 0.0 {
                                        evec[q] += a * fpi * grad;
                                    }
                                }
                            }
                        }
                    }
                    for i in 0..span {
                        let b = cs.drift_field(i).eval(&x);
                        if b == 0.0 {
                            continue;
                        }
                        for q in 0..dim {
                            evec[q] += b * frame[(q, i)];
                        }
                    }
                }
                LocalForm::FokkerPlanck(_) => {
                    for i in 0..n1 {
                        for p in 0..dim {
                            let fpi = frame[(p, i)];
                            if fpi == 0.0 {
                                continue;
                            }
                            for q in 0..dim {
                                dmat[p * dim + q] += fpi * frame[(q, i)];
                            }
                            for q in 0..dim {
                                let grad = group.frame_gradient(p, q, i);
                                if grad != 0.0 {
                                    evec[q] += fpi * grad;
                                }
                            }
                        }
                    }
                }
            }
            // Stability budget of the explicit step at this node. In
            // Fokker-Planck mode the stencil acts on a v, so the center
            // coefficient carries a(x).
            let scale = match &problem.form {
                LocalForm::FokkerPlanck(a) => a.eval(&x).abs(),
                _ => 1.0,
            };
            let mut denom = 0.0;
            for p in 0..dim {
                denom += 2.0 * dmat[p * dim + p].abs() / (h[p] * h[p]);
                for q in (p + 1)..dim {
                    denom += 2.0 * (dmat[p * dim + q] + dmat[q * dim + p]).abs() / (2.0 * h[p] * h[q]);
                }
                denom += evec[p].abs() / h[p];
            }
            denom_max = denom_max.max(scale * denom);
        }
        if !(denom_max > 0.0) && !matches!(problem.form, LocalForm::FokkerPlanck(_)) {
            return Err(Error::RateOverflow("degenerate local operator".into()));
        }
        let dt_max = 2.0 * 0.4 / denom_max.max(1e-300);

        let node_scale = match &problem.form {
            LocalForm::FokkerPlanck(a) => Some(
                (0..grid.node_count())
                    .map(|flat| a.eval(&grid.node_coords(flat)))
                    .collect(),
            ),
            _ => None,
        };

        Ok(LocalSolver { problem, interior, d, e, node_scale, dt_max })
    }

    pub fn problem(&self) -> &LocalProblem {
        &self.problem
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn initial_state(&self) -> EvolutionState {
        let values = self
            .interior
            .iter()
            .map(|&flat| self.problem.u0.eval(&self.problem.grid.node_coords(flat)))
            .collect();
        EvolutionState::from_values(0.0, values, 0.0)
    }

    /// Nodal field over the whole grid (product field in Fokker-Planck
    /// mode), with Dirichlet values from g on the boundary layer.
    fn full_field(&self, values: &[f64], t: f64) -> Vec<f64> {
        let grid = &self.problem.grid;
        let mut full = vec![0.0; grid.node_count()];
        let mut interior_iter = self.interior.iter().zip(values);
        let mut next = interior_iter.next();
        for flat in 0..grid.node_count() {
            if let Some((&iflat, &v)) = next {
                if iflat == flat {
                    full[flat] = v;
                    next = interior_iter.next();
                    continue;
                }
            }
            full[flat] = self.problem.g.eval(&grid.node_coords(flat), t);
        }
        if let Some(scale) = &self.node_scale {
            for (v, s) in full.iter_mut().zip(scale) {
                *v *= s;
            }
        }
        full
    }

    /// The discrete spatial operator applied to a full nodal field, at one
    /// interior node (index into the interior list).
    pub fn apply_at(&self, full: &[f64], node: usize) -> f64 {
        let grid = &self.problem.grid;
        let dim = grid.dim();
        let h = grid.spacing();
        let flat = self.interior[node];
        let dmat = &self.d[node * dim * dim..(node + 1) * dim * dim];
        let evec = &self.e[node * dim..(node + 1) * dim];
        let center = full[flat];
        let mut acc = 0.0;
        for p in 0..dim {
            let sp = stride(grid, p);
            let up = full[flat + sp];
            let dn = full[flat - sp];
            let dpp = dmat[p * dim + p];
            if dpp != 0.0 {
                acc += dpp * (up - 2.0 * center + dn) / (h[p] * h[p]);
            }
            let ep = evec[p];
            if ep != 0.0 {
                acc += ep * (up - dn) / (2.0 * h[p]);
            }
            for q in (p + 1)..dim {
                let dpq = dmat[p * dim + q] + dmat[q * dim + p];
                if dpq != 0.0 {
                    let sq = stride(grid, q);
                    let cross = full[flat + sp + sq] - full[flat + sp - sq]
                        - full[flat - sp + sq]
                        + full[flat - sp - sq];
                    acc += dpq * cross / (4.0 * h[p] * h[q]);
                }
            }
        }
        acc
    }

    pub fn step(&self, state: &EvolutionState, dt: f64) -> Result<EvolutionState> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if dt > self.dt_max * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, dt_max: self.dt_max });
        }
        let full = self.full_field(&state.values, state.t);
        let next: Vec<f64> = (0..state.values.len())
            .into_par_iter()
            .map(|node| state.values[node] + dt * self.apply_at(&full, node))
            .collect();
        for (node, v) in next.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteState { node, t: state.t + dt });
            }
        }
        Ok(EvolutionState::from_values(state.t + dt, next, dt))
    }

    /// March to the horizon, landing exactly on requested output times.
    pub fn solve(&self, dt: f64, outputs: &[f64]) -> Result<Vec<EvolutionState>> {
        let mut outputs: Vec<f64> = outputs.to_vec();
        outputs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if outputs.iter().any(|&t| t < 0.0 || t > self.problem.horizon + 1e-12) {
            return Err(Error::Config("output times must lie in [0, horizon]".into()));
        }
        let mut state = self.initial_state();
        let mut recorded = Vec::with_capacity(outputs.len());
        for &target in &outputs {
            while state.t < target - 1e-13 {
                let step = dt.min(target - state.t);
                state = self.step(&state, step)?;
            }
            recorded.push(state.clone());
        }
        Ok(recorded)
    }
}

#[inline]
fn stride(grid: &GridSpec, axis: usize) -> usize {
    // Stride of +1 along an axis in flat indexing.
    let mut multi = vec![0usize; grid.dim()];
    multi[axis] = 1;
    grid.flat_index(&multi)
}

/// Convenience wrapper: build the solver and run it. `dt = None` uses the
/// stability bound.
pub fn solve_local(
    problem: LocalProblem,
    dt: Option<f64>,
    outputs: &[f64],
) -> Result<Vec<EvolutionState>> {
    let solver = LocalSolver::new(problem)?;
    let dt = dt.unwrap_or(solver.dt_max);
    solver.solve(dt, outputs)
}
