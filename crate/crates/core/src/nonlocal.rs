//! Explicit and fixed-point time integration of the nonlocal Dirichlet
//! problems: the field evolves on interior grid nodes, while everything
//! outside the open box (including boundary nodes) carries the exterior
//! datum g at the current time.
//!
//! The quadrature stencil of every interior node is assembled once into a
//! rate table: each kernel node turns into a sample with an outflow weight,
//! a center weight, and a target that is either a cell of the grid
//! (multilinear interpolation) or an analytic evaluation of g at an
//! exterior point. Under the monotonicity bound dt <= 0.9 / max rate, an
//! explicit step is a convex combination of the current values and the
//! exterior data, which is what the discrete comparison results rest on.

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{CellLocation, GridSpec, MAX_GRID_DIM};
use crate::group::{ScalarField, StratifiedGroup, TimeField};
use crate::kernel::KernelJ;
use crate::operators::{dilated_chol_offset, dilated_offset, drift_weight};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Rescaled convolution diffusion.
    Convolution,
    /// Anisotropic drift-diffusion kernel operator.
    DriftDiffusion,
    /// Fokker-Planck kernel operator.
    FokkerPlanck,
}

/// A nonlocal Dirichlet problem on a box grid.
#[derive(Debug, Clone)]
pub struct GridProblem {
    pub group: StratifiedGroup,
    pub grid: GridSpec,
    pub kind: OperatorKind,
    pub kernel: KernelJ,
    /// Coefficients for the drift-diffusion operator.
    pub coeffs: Option<CoefficientSet>,
    /// Scalar coefficient for the Fokker-Planck operator.
    pub scalar_coeff: Option<ScalarField>,
    pub epsilon: f64,
    pub u0: ScalarField,
    pub g: TimeField,
    pub horizon: f64,
}

impl GridProblem {
    pub fn convolution(
        group: StratifiedGroup,
        grid: GridSpec,
        kernel: KernelJ,
        epsilon: f64,
        u0: ScalarField,
        g: TimeField,
        horizon: f64,
    ) -> Self {
        GridProblem {
            group,
            grid,
            kind: OperatorKind::Convolution,
            kernel,
            coeffs: None,
            scalar_coeff: None,
            epsilon,
            u0,
            g,
            horizon,
        }
    }

    pub fn drift_diffusion(
        group: StratifiedGroup,
        grid: GridSpec,
        kernel: KernelJ,
        coeffs: CoefficientSet,
        epsilon: f64,
        u0: ScalarField,
        g: TimeField,
        horizon: f64,
    ) -> Self {
        GridProblem {
            group,
            grid,
            kind: OperatorKind::DriftDiffusion,
            kernel,
            coeffs: Some(coeffs),
            scalar_coeff: None,
            epsilon,
            u0,
            g,
            horizon,
        }
    }

    pub fn fokker_planck(
        group: StratifiedGroup,
        grid: GridSpec,
        kernel: KernelJ,
        a: ScalarField,
        epsilon: f64,
        u0: ScalarField,
        g: TimeField,
        horizon: f64,
    ) -> Self {
        GridProblem {
            group,
            grid,
            kind: OperatorKind::FokkerPlanck,
            kernel,
            coeffs: None,
            scalar_coeff: Some(a),
            epsilon,
            u0,
            g,
            horizon,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid.dim() != self.group.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.group.dim(),
                got: self.grid.dim(),
            });
        }
        if self.kernel.dim() != self.group.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.group.dim(),
                got: self.kernel.dim(),
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.horizon < 0.0 {
            return Err(Error::Config("horizon must be nonnegative".into()));
        }
        if self.grid.interior_count() == 0 {
            return Err(Error::EmptyDomain("grid has no interior nodes".into()));
        }
        match self.kind {
            OperatorKind::DriftDiffusion if self.coeffs.is_none() => {
                Err(Error::Config("drift-diffusion problems need coefficients".into()))
            }
            OperatorKind::FokkerPlanck if self.scalar_coeff.is_none() => {
                Err(Error::Config("Fokker-Planck problems need a scalar coefficient".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    /// Strictly inside the box: interpolate nodal values.
    Cell(CellLocation),
    /// Outside (or on) the boundary: evaluate g there.
    Exterior { point: [f64; MAX_GRID_DIM] },
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    /// Weight of the sampled field value. In Fokker-Planck mode the sampled
    /// field is the nodal product a u (exterior samples fold a(y) into the
    /// weight instead, since g is evaluated analytically there).
    w_out: f64,
    /// Weight of the center value u(x) paired with this sample.
    w_center: f64,
    target: Target,
}

/// The assembled quadrature stencils of every interior node.
#[derive(Debug)]
pub struct RateTable {
    samples: Vec<Sample>,
    offsets: Vec<usize>,
    /// Flat grid index per interior node, in flat order.
    interior: Vec<usize>,
    /// Scalar coefficient at every grid node (Fokker-Planck mode): the
    /// interpolated field is the nodal product a u.
    node_scale: Option<Vec<f64>>,
    /// Total outflow rate per interior node (sum of positive center weights).
    lambda: Vec<f64>,
    pub dt_max: f64,
    /// Largest per-node rate; the contraction window of the fixed-point
    /// solver is measured against it.
    pub max_rate: f64,
    /// Recorded when u0 and g(., 0) disagree on the boundary beyond 1e-8.
    pub compatibility_gap: f64,
    /// Set when the kernel reach exceeds the box extent (all stencils
    /// exterior-dominated).
    pub collar_heavy: bool,
    /// Set when some quadrature weight came out negative (positivity
    /// constant too small); monotonicity is not guaranteed then.
    pub has_negative_weights: bool,
}

impl RateTable {
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Fraction of samples bound to the exterior datum, per interior node.
    pub fn exterior_fraction(&self, node: usize) -> f64 {
        let range = self.offsets[node]..self.offsets[node + 1];
        let total = range.len();
        if total == 0 {
            return 0.0;
        }
        let ext = self.samples[range]
            .iter()
            .filter(|s| matches!(s.target, Target::Exterior { .. }))
            .count();
        ext as f64 / total as f64
    }
}

/// Build the rate table of a problem.
pub fn assemble_rates(problem: &GridProblem) -> Result<RateTable> {
    problem.validate()?;
    let grid = &problem.grid;
    let group = &problem.group;
    let kernel = &problem.kernel;
    let eps = problem.epsilon;
    let dim = grid.dim();
    let interior = grid.interior_nodes();

    let c_j = kernel.second_moment();
    let scalar = problem.scalar_coeff.as_ref();

    // Compatibility of u0 with g(., 0) on boundary nodes.
    let mut compatibility_gap = 0.0f64;
    for flat in 0..grid.node_count() {
        if grid.is_boundary(flat) {
            let x = grid.node_coords(flat);
            let gap = (problem.u0.eval(&x) - problem.g.eval(&x, 0.0)).abs();
            compatibility_gap = compatibility_gap.max(gap);
        }
    }

    let build_node = |&flat: &usize| -> Result<(Vec<Sample>, f64)> {
            let x = grid.node_coords(flat);
            let ux_scale;
            let pref;
            let pc;
            match problem.kind {
                OperatorKind::Convolution => {
                    pref = 1.0 / (eps * eps);
                    ux_scale = 1.0;
                    pc = None;
                }
                OperatorKind::DriftDiffusion => {
                    let cs = problem.coeffs.as_ref().unwrap();
                    let m = cs.positivity()?;
                    pref = 2.0 / (eps * eps * c_j * m);
                    ux_scale = 1.0;
                    pc = Some((cs.at(&x)?, m));
                }
                OperatorKind::FokkerPlanck => {
                    pref = 2.0 / (c_j * eps * eps);
                    ux_scale = scalar.unwrap().eval(&x);
                    pc = None;
                }
            }

            let mut offset = vec![0.0; dim];
            let mut point = vec![0.0; dim];
            let mut samples = Vec::with_capacity(kernel.node_count());
            let mut lambda = 0.0f64;
            for (t, jw) in kernel.quadrature() {
                if jw == 0.0 {
                    continue;
                }
                let base_w = match &pc {
                    Some((pc, m)) => {
                        let cs = problem.coeffs.as_ref().unwrap();
                        dilated_chol_offset(group, eps, pc, t, &mut offset);
                        pref * jw * drift_weight(group, cs, pc, *m, eps, t)
                    }
                    None => {
                        dilated_offset(group, eps, t, &mut offset);
                        pref * jw
                    }
                };
                group.multiply_unchecked(&x, &offset, &mut point);
                let w_center = base_w * ux_scale;
                let (w_out, target) = match grid.locate(&point) {
                    Some(loc) => (base_w, Target::Cell(loc)),
                    None => {
                        let mut p = [0.0; MAX_GRID_DIM];
                        p[..dim].copy_from_slice(&point);
                        let w = match problem.kind {
                            OperatorKind::FokkerPlanck => base_w * scalar.unwrap().eval(&point),
                            _ => base_w,
                        };
                        (w, Target::Exterior { point: p })
                    }
                };
                lambda += w_center.max(0.0);
                samples.push(Sample { w_out, w_center, target });
            }
            if !lambda.is_finite() || lambda > 1e15 {
                return Err(Error::RateOverflow(format!(
                    "node rate {lambda} at flat index {flat} (epsilon too small for this grid)"
                )));
            }
            Ok((samples, lambda))
        };

    // Assemble in batches so the transient per-node vectors never double
    // the table's footprint (3D tables run into the gigabytes).
    let mut samples = Vec::new();
    let mut offsets = Vec::with_capacity(interior.len() + 1);
    let mut lambda = Vec::with_capacity(interior.len());
    offsets.push(0);
    let mut has_negative_weights = false;
    for batch in interior.chunks(4096) {
        let per_node: Vec<(Vec<Sample>, f64)> =
            batch.par_iter().map(build_node).collect::<Result<Vec<_>>>()?;
        for (node_samples, node_lambda) in per_node {
            has_negative_weights |=
                node_samples.iter().any(|s| s.w_out < 0.0 || s.w_center < 0.0);
            samples.extend_from_slice(&node_samples);
            offsets.push(samples.len());
            lambda.push(node_lambda);
        }
    }
    let max_rate = lambda.iter().copied().fold(0.0, f64::max);
    if max_rate <= 0.0 {
        return Err(Error::RateOverflow("all stencils are empty".into()));
    }
    let dt_max = 0.9 / max_rate;

    // Kernel reach estimate along first-stratum axes.
    let reach = eps * kernel.radius();
    let collar_heavy = reach >= grid.max_extent();

    let node_scale = match problem.kind {
        OperatorKind::FokkerPlanck => Some(
            (0..grid.node_count())
                .map(|flat| scalar.unwrap().eval(&grid.node_coords(flat)))
                .collect(),
        ),
        _ => None,
    };

    Ok(RateTable {
        samples,
        offsets,
        interior,
        node_scale,
        lambda,
        dt_max,
        max_rate,
        compatibility_gap,
        collar_heavy,
        has_negative_weights,
    })
}

/// Field values on interior nodes at a time.
#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub t: f64,
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub last_dt: f64,
}

impl EvolutionState {
    pub(crate) fn from_values(t: f64, values: Vec<f64>, last_dt: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        EvolutionState { t, values, min: lo, max: hi, last_dt }
    }
}

/// Initial state sampled from u0.
pub fn initial_state(problem: &GridProblem, table: &RateTable) -> EvolutionState {
    let values = table
        .interior
        .iter()
        .map(|&flat| problem.u0.eval(&problem.grid.node_coords(flat)))
        .collect();
    EvolutionState::from_values(0.0, values, 0.0)
}

/// Nodal values over the whole grid: interior from the state, everything
/// else from g at time t. In Fokker-Planck mode this is the product field
/// a u, which is the quantity the operator interpolates.
fn full_field(problem: &GridProblem, table: &RateTable, values: &[f64], t: f64) -> Vec<f64> {
    let grid = &problem.grid;
    let mut full = vec![0.0; grid.node_count()];
    let mut interior_iter = table.interior.iter().zip(values);
    let mut next = interior_iter.next();
    for flat in 0..grid.node_count() {
        if let Some((&iflat, &v)) = next {
            if iflat == flat {
                full[flat] = v;
                next = interior_iter.next();
                continue;
            }
        }
        full[flat] = problem.g.eval(&grid.node_coords(flat), t);
    }
    if let Some(scale) = &table.node_scale {
        for (v, s) in full.iter_mut().zip(scale) {
            *v *= s;
        }
    }
    full
}

/// Operator values on interior nodes given the full nodal field.
fn apply_operator(
    problem: &GridProblem,
    table: &RateTable,
    full: &[f64],
    values: &[f64],
    t: f64,
    out: &mut [f64],
) {
    let grid = &problem.grid;
    out.par_iter_mut().enumerate().for_each(|(node, du)| {
        let ux = values[node];
        let mut acc = 0.0;
        for s in &table.samples[table.offsets[node]..table.offsets[node + 1]] {
            let val = match &s.target {
                Target::Cell(loc) => grid.interpolate(full, loc),
                Target::Exterior { point } => problem.g.eval(&point[..grid.dim()], t),
            };
            acc += s.w_out * val - s.w_center * ux;
        }
        *du = acc;
    });
}

/// One forward Euler step; g is evaluated at the pre-step time.
pub fn step_explicit(
    problem: &GridProblem,
    table: &RateTable,
    state: &EvolutionState,
    dt: f64,
) -> Result<EvolutionState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if dt > table.dt_max * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, dt_max: table.dt_max });
    }
    let full = full_field(problem, table, &state.values, state.t);
    let mut du = vec![0.0; state.values.len()];
    apply_operator(problem, table, &full, &state.values, state.t, &mut du);
    let mut next = Vec::with_capacity(state.values.len());
    for (node, (&u, &d)) in state.values.iter().zip(&du).enumerate() {
        let v = u + dt * d;
        if !v.is_finite() {
            return Err(Error::NonFiniteState { node, t: state.t + dt });
        }
        next.push(v);
    }
    Ok(EvolutionState::from_values(state.t + dt, next, dt))
}

/// March to the horizon, landing exactly on each requested output time;
/// returns the states at those times (and only those).
pub fn solve(
    problem: &GridProblem,
    table: &RateTable,
    dt: f64,
    outputs: &[f64],
) -> Result<Vec<EvolutionState>> {
    problem.validate()?;
    let mut outputs: Vec<f64> = outputs.to_vec();
    outputs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if outputs.iter().any(|&t| t < 0.0 || t > problem.horizon + 1e-12) {
        return Err(Error::Config("output times must lie in [0, horizon]".into()));
    }
    let mut state = initial_state(problem, table);
    let mut recorded = Vec::with_capacity(outputs.len());
    for &target in &outputs {
        while state.t < target - 1e-13 {
            let step = dt.min(target - state.t);
            state = step_explicit(problem, table, &state, step)?;
        }
        recorded.push(state.clone());
    }
    Ok(recorded)
}

/// Outcome of the fixed-point construction on a short window.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub state: EvolutionState,
    /// Contraction factor 2 t0 max_rate of the window.
    pub q: f64,
    /// Sup distances between successive iterates.
    pub distances: Vec<f64>,
    /// Ratios of successive distances (all <= q for a contraction).
    pub ratios: Vec<f64>,
    pub iterations: usize,
}

/// Fixed-point (successive substitution) solve of the integral formulation
/// w(t) = u0 + int_0^t (operator w)(r) dr on [0, t0], with trapezoid time
/// quadrature on uniformly spaced nodes. Errors when the discrete
/// contraction factor q = 2 t0 max_rate reaches 1.
pub fn picard_solve(
    problem: &GridProblem,
    table: &RateTable,
    t0: f64,
    max_iter: usize,
    time_nodes: usize,
) -> Result<PicardOutcome> {
    problem.validate()?;
    if !(t0 > 0.0) || time_nodes < 2 || max_iter == 0 {
        return Err(Error::Config("need t0 > 0, >= 2 time nodes and >= 1 iteration".into()));
    }
    let q = 2.0 * t0 * table.max_rate;
    if q >= 1.0 {
        return Err(Error::ContractionWindow { q });
    }
    let n_interior = table.interior.len();
    let init = initial_state(problem, table);
    let dt = t0 / (time_nodes - 1) as f64;

    let mut iterate: Vec<Vec<f64>> = vec![init.values.clone(); time_nodes];
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut iterations = 0;
    let mut ops = vec![vec![0.0; n_interior]; time_nodes];
    for _ in 0..max_iter {
        iterations += 1;
        for (j, w_j) in iterate.iter().enumerate() {
            let t = j as f64 * dt;
            let full = full_field(problem, table, w_j, t);
            apply_operator(problem, table, &full, w_j, t, &mut ops[j]);
        }
        // Cumulative trapezoid in time.
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(time_nodes);
        next.push(init.values.clone());
        for j in 1..time_nodes {
            let prev = &next[j - 1];
            let row: Vec<f64> = (0..n_interior)
                .map(|i| prev[i] + 0.5 * dt * (ops[j - 1][i] + ops[j][i]))
                .collect();
            next.push(row);
        }
        let mut dist = 0.0f64;
        for (old, new) in iterate.iter().zip(&next) {
            for (a, b) in old.iter().zip(new) {
                dist = dist.max((a - b).abs());
            }
        }
        if let Some(&last) = distances.last() {
            if last > 0.0 {
                ratios.push(dist / last);
            }
        }
        distances.push(dist);
        iterate = next;
        let scale = init.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if dist <= 1e-13 * scale {
            break;
        }
    }
    let state = EvolutionState::from_values(t0, iterate.pop().unwrap(), dt);
    Ok(PicardOutcome { state, q, distances, ratios, iterations })
}

/// Result of running two ordered problems side by side.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Smallest value of (u_A - u_B) over all interior nodes and steps.
    pub min_gap: f64,
    /// Where it occurred: (time, flat node index).
    pub argmin: (f64, usize),
    /// min_gap >= -1e-10.
    pub ordered: bool,
}

/// March two problems in lockstep and track the ordering of their solutions.
/// The problems must share grid, kernel, operator and epsilon; only the
/// data (u0, g) may differ, with the A-data pointwise above the B-data.
pub fn check_comparison(
    problem_a: &GridProblem,
    problem_b: &GridProblem,
    dt: f64,
) -> Result<ComparisonReport> {
    if problem_a.grid != problem_b.grid
        || problem_a.kind != problem_b.kind
        || problem_a.epsilon != problem_b.epsilon
    {
        return Err(Error::Config(
            "comparison requires identical grid, operator and epsilon".into(),
        ));
    }
    let table_a = assemble_rates(problem_a)?;
    let table_b = assemble_rates(problem_b)?;
    let mut state_a = initial_state(problem_a, &table_a);
    let mut state_b = initial_state(problem_b, &table_b);
    let horizon = problem_a.horizon.min(problem_b.horizon);

    let mut min_gap = f64::INFINITY;
    let mut argmin = (0.0, 0);
    let mut scan = |ta: &EvolutionState, tb: &EvolutionState, table: &RateTable| {
        for ((&a, &b), &flat) in ta.values.iter().zip(&tb.values).zip(table.interior.iter()) {
            let gap = a - b;
            if gap < min_gap {
                min_gap = gap;
                argmin = (ta.t, flat);
            }
        }
    };
    scan(&state_a, &state_b, &table_a);
    while state_a.t < horizon - 1e-13 {
        let step = dt.min(horizon - state_a.t);
        state_a = step_explicit(problem_a, &table_a, &state_a, step)?;
        state_b = step_explicit(problem_b, &table_b, &state_b, step)?;
        scan(&state_a, &state_b, &table_a);
    }
    Ok(ComparisonReport { min_gap, argmin, ordered: min_gap >= -1e-10 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{make_bump_kernel, KernelShape};

    fn line_problem(
        kind: OperatorKind,
        h: f64,
        eps: f64,
        u0: ScalarField,
        g: TimeField,
        horizon: f64,
    ) -> GridProblem {
        let group = StratifiedGroup::abelian(1);
        let grid = GridSpec::uniform(&[(0.0, 1.0)], h).unwrap();
        let kernel = make_bump_kernel(&group, 1.0, KernelShape::Indicator, 32).unwrap();
        match kind {
            OperatorKind::Convolution => {
                GridProblem::convolution(group, grid, kernel, eps, u0, g, horizon)
            }
            OperatorKind::DriftDiffusion => {
                let cs = CoefficientSet::preset("constant", &StratifiedGroup::abelian(1))
                    .unwrap()
                    .with_positivity(2.2);
                GridProblem::drift_diffusion(group, grid, kernel, cs, eps, u0, g, horizon)
            }
            OperatorKind::FokkerPlanck => {
                let a = ScalarField::new(|x: &[f64]| 2.0 + x[0].sin());
                GridProblem::fokker_planck(group, grid, kernel, a, eps, u0, g, horizon)
            }
        }
    }

    #[test]
    fn constant_fields_are_stationary() {
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 64.0,
            0.15,
            ScalarField::constant(2.5),
            TimeField::constant(2.5),
            0.05,
        );
        let table = assemble_rates(&p).unwrap();
        let states = solve(&p, &table, table.dt_max, &[0.05]).unwrap();
        for v in &states[0].values {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_table_operator_value_on_square_field() {
        // Interpolated x^2 through the stencil recovers the second moment
        // 1/3 up to O(h^2) (amplified by the eps^{-2} rate).
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 256.0,
            0.2,
            ScalarField::polynomial(|x: &[f64]| x[0] * x[0]),
            TimeField::new(|x: &[f64], _| x[0] * x[0]),
            0.1,
        );
        let table = assemble_rates(&p).unwrap();
        let state = initial_state(&p, &table);
        let full = full_field(&p, &table, &state.values, 0.0);
        let mut du = vec![0.0; state.values.len()];
        apply_operator(&p, &table, &full, &state.values, 0.0, &mut du);
        // Pick a node well inside: x = 0.5.
        let mid = table
            .interior
            .iter()
            .position(|&f| (p.grid.node_coords(f)[0] - 0.5).abs() < 1e-12)
            .unwrap();
        assert!((du[mid] - 1.0 / 3.0).abs() < 2e-4, "{}", du[mid]);
    }

    #[test]
    fn tiny_domain_makes_stencils_exterior() {
        // With eps scaled far past the domain diameter even the innermost
        // quadrature node lands outside, so every stencil binds to g alone.
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 8.0,
            25.0,
            ScalarField::constant(0.0),
            TimeField::constant(5.0),
            1.0,
        );
        let table = assemble_rates(&p).unwrap();
        assert!(table.collar_heavy);
        for node in 0..table.interior_nodes().len() {
            assert_eq!(table.exterior_fraction(node), 1.0);
        }
        // The update is driven entirely by g: one maximal step covers 0.9 of
        // the gap to the exterior value.
        let state = initial_state(&p, &table);
        let next = step_explicit(&p, &table, &state, table.dt_max).unwrap();
        for v in &next.values {
            assert!((v - 4.5).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn positivity_is_preserved() {
        let u0 = ScalarField::new(|x: &[f64]| (std::f64::consts::PI * x[0]).sin().max(0.0) + 0.1);
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 64.0,
            0.15,
            u0,
            TimeField::constant(0.1),
            0.05,
        );
        let table = assemble_rates(&p).unwrap();
        let states = solve(&p, &table, table.dt_max, &[0.01, 0.03, 0.05]).unwrap();
        for s in &states {
            assert!(s.min >= 0.0, "negative value at t={}", s.t);
        }
    }

    #[test]
    fn linear_data_is_stationary_for_convolution() {
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 128.0,
            0.1,
            ScalarField::polynomial(|x: &[f64]| x[0]),
            TimeField::new(|x: &[f64], _| x[0]),
            0.05,
        );
        let table = assemble_rates(&p).unwrap();
        let states = solve(&p, &table, table.dt_max, &[0.05]).unwrap();
        for (node, v) in states[0].values.iter().enumerate() {
            let x = p.grid.node_coords(table.interior[node])[0];
            assert!((v - x).abs() < 5e-5, "x={x}: {v}");
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        let u0 = ScalarField::new(|x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin());
        let g = TimeField::new(|x: &[f64], t: f64| 0.3 * (x[0] + t).cos());
        let p = line_problem(OperatorKind::DriftDiffusion, 1.0 / 64.0, 0.2, u0.clone(), g.clone(), 0.08);
        let table = assemble_rates(&p).unwrap();
        assert!(!table.has_negative_weights);
        // Bound of the data: max over u0 on nodes and g over collar/time.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=200 {
            let x = [-0.5 + 2.0 * i as f64 / 200.0];
            lo = lo.min(u0.eval(&x)).min(g.eval(&x, 0.0));
            hi = hi.max(u0.eval(&x)).max(g.eval(&x, 0.08));
            for k in 0..=8 {
                let t = 0.01 * k as f64;
                lo = lo.min(g.eval(&x, t));
                hi = hi.max(g.eval(&x, t));
            }
        }
        let states = solve(&p, &table, table.dt_max, &[0.02, 0.05, 0.08]).unwrap();
        for s in &states {
            assert!(s.min >= lo - 1e-10 && s.max <= hi + 1e-10, "t={}", s.t);
        }
    }

    #[test]
    fn solver_is_linear_in_the_data() {
        let u0a = ScalarField::new(|x: &[f64]| (std::f64::consts::PI * x[0]).sin());
        let u0b = ScalarField::new(|x: &[f64]| x[0] * (1.0 - x[0]));
        let ga = TimeField::new(|x: &[f64], t: f64| (x[0] - t).cos());
        let gb = TimeField::new(|x: &[f64], t: f64| x[0] * t);
        let (alpha, beta) = (1.7, -0.6);

        let run = |u0: ScalarField, g: TimeField| -> Vec<f64> {
            let p = line_problem(OperatorKind::DriftDiffusion, 1.0 / 64.0, 0.15, u0, g, 0.05);
            let table = assemble_rates(&p).unwrap();
            solve(&p, &table, table.dt_max, &[0.05]).unwrap().remove(0).values
        };
        let a = run(u0a.clone(), ga.clone());
        let b = run(u0b.clone(), gb.clone());
        let combo = run(
            {
                let (u0a, u0b) = (u0a.clone(), u0b.clone());
                ScalarField::new(move |x: &[f64]| alpha * u0a.eval(x) + beta * u0b.eval(x))
            },
            {
                let (ga, gb) = (ga.clone(), gb.clone());
                TimeField::new(move |x: &[f64], t: f64| alpha * ga.eval(x, t) + beta * gb.eval(x, t))
            },
        );
        for ((&va, &vb), &vc) in a.iter().zip(&b).zip(&combo) {
            assert!((alpha * va + beta * vb - vc).abs() < 1e-10);
        }
    }

    #[test]
    fn fokker_planck_preserves_constant_product() {
        // a u = 1 initially and on the collar stays 1 for all time.
        let a = ScalarField::new(|x: &[f64]| 2.0 + x[0].sin());
        let u0 = ScalarField::new(|x: &[f64]| 1.0 / (2.0 + x[0].sin()));
        let g = TimeField::new(|x: &[f64], _| 1.0 / (2.0 + x[0].sin()));
        let group = StratifiedGroup::abelian(1);
        let grid = GridSpec::uniform(&[(0.0, 1.0)], 1.0 / 64.0).unwrap();
        let kernel = make_bump_kernel(&group, 1.0, KernelShape::QuarticBump, 32).unwrap();
        let p = GridProblem::fokker_planck(group, grid, kernel, a.clone(), 0.15, u0, g, 0.05);
        let table = assemble_rates(&p).unwrap();
        let states = solve(&p, &table, table.dt_max, &[0.05]).unwrap();
        for (node, v) in states[0].values.iter().enumerate() {
            let x = p.grid.node_coords(table.interior[node]);
            let product = a.eval(&x) * v;
            assert!((product - 1.0).abs() < 1e-8, "a*u = {product}");
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 32.0,
            0.2,
            ScalarField::constant(0.0),
            TimeField::constant(0.0),
            0.1,
        );
        let table = assemble_rates(&p).unwrap();
        let state = initial_state(&p, &table);
        assert!(matches!(
            step_explicit(&p, &table, &state, table.dt_max * 2.0),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn zero_horizon_returns_initial_data() {
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 32.0,
            0.2,
            ScalarField::polynomial(|x: &[f64]| x[0]),
            TimeField::constant(0.0),
            0.0,
        );
        let table = assemble_rates(&p).unwrap();
        let states = solve(&p, &table, table.dt_max, &[0.0]).unwrap();
        let init = initial_state(&p, &table);
        assert_eq!(states[0].values, init.values);
    }

    #[test]
    fn empty_interior_is_rejected() {
        let group = StratifiedGroup::abelian(1);
        assert!(GridSpec::uniform(&[(0.0, 1.0)], 1.0).is_err());
        // A 2-cell grid has exactly one interior node and assembles fine.
        let grid = GridSpec::uniform(&[(0.0, 1.0)], 0.5).unwrap();
        let kernel = make_bump_kernel(&group, 1.0, KernelShape::Indicator, 8).unwrap();
        let p = GridProblem::convolution(
            group,
            grid,
            kernel,
            0.3,
            ScalarField::constant(0.0),
            TimeField::constant(0.0),
            0.1,
        );
        assert!(assemble_rates(&p).is_ok());
    }

    #[test]
    fn compatibility_gap_is_recorded() {
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 32.0,
            0.2,
            ScalarField::constant(1.0),
            TimeField::constant(0.0),
            0.1,
        );
        let table = assemble_rates(&p).unwrap();
        assert!((table.compatibility_gap - 1.0).abs() < 1e-12);

        let ok = line_problem(
            OperatorKind::Convolution,
            1.0 / 32.0,
            0.2,
            ScalarField::constant(1.0),
            TimeField::constant(1.0),
            0.1,
        );
        let table = assemble_rates(&ok).unwrap();
        assert!(table.compatibility_gap < 1e-8);
    }

    #[test]
    fn picard_constant_data_fixed_point_at_first_iteration() {
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 32.0,
            0.2,
            ScalarField::constant(3.0),
            TimeField::constant(3.0),
            1.0,
        );
        let table = assemble_rates(&p).unwrap();
        let t0 = 0.4 / table.max_rate;
        let out = picard_solve(&p, &table, t0, 5, 16).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.distances[0], 0.0);
        for v in &out.state.values {
            assert_eq!(*v, 3.0);
        }
    }

    #[test]
    fn picard_contracts_at_rate_q() {
        let u0 = ScalarField::new(|x: &[f64]| (std::f64::consts::PI * x[0]).sin() + 0.3);
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 64.0,
            0.2,
            u0,
            TimeField::constant(0.3),
            1.0,
        );
        let table = assemble_rates(&p).unwrap();
        let t0 = 0.35 / table.max_rate;
        let out = picard_solve(&p, &table, t0, 40, 32).unwrap();
        assert!(out.q < 1.0);
        for (k, r) in out.ratios.iter().enumerate() {
            // Skip ratios once distances hit rounding level.
            if out.distances[k + 1] > 1e-12 {
                assert!(*r <= out.q + 1e-9, "ratio {r} exceeds q = {}", out.q);
            }
        }
    }

    #[test]
    fn picard_rejects_long_windows() {
        let p = line_problem(
            OperatorKind::Convolution,
            1.0 / 32.0,
            0.2,
            ScalarField::constant(0.0),
            TimeField::constant(0.0),
            1.0,
        );
        let table = assemble_rates(&p).unwrap();
        let t0 = 0.6 / table.max_rate;
        assert!(matches!(
            picard_solve(&p, &table, t0, 5, 16),
            Err(Error::ContractionWindow { .. })
        ));
    }

    #[test]
    fn picard_matches_explicit_euler() {
        let u0 = ScalarField::new(|x: &[f64]| (std::f64::consts::PI * x[0]).sin());
        let g = TimeField::constant(0.0);
        let p = line_problem(OperatorKind::Convolution, 1.0 / 128.0, 0.1, u0, g, 1.0);
        let table = assemble_rates(&p).unwrap();
        let t0 = 0.4 / table.max_rate;
        let picard = picard_solve(&p, &table, t0, 200, 64).unwrap();
        let euler = solve(&p, &table, table.dt_max / 8.0, &[t0]).unwrap().remove(0);
        let mut gap = 0.0f64;
        for (a, b) in picard.state.values.iter().zip(&euler.values) {
            gap = gap.max((a - b).abs());
        }
        assert!(gap <= 1e-3, "picard vs euler gap {gap}");
    }

    #[test]
    fn comparison_identical_problems_is_exact() {
        let u0 = ScalarField::new(|x: &[f64]| x[0] * (1.0 - x[0]));
        let g = TimeField::constant(0.0);
        let pa = line_problem(OperatorKind::Convolution, 1.0 / 64.0, 0.15, u0.clone(), g.clone(), 0.05);
        let pb = line_problem(OperatorKind::Convolution, 1.0 / 64.0, 0.15, u0, g, 0.05);
        let table = assemble_rates(&pa).unwrap();
        let report = check_comparison(&pa, &pb, table.dt_max).unwrap();
        assert_eq!(report.min_gap, 0.0);
        assert!(report.ordered);
    }

    #[test]
    fn comparison_shifted_data_keeps_exact_unit_gap() {
        // u0 + 1, g + 1: by linearity and constant annihilation the gap
        // stays exactly 1 (drift-diffusion kernel).
        let u0 = ScalarField::new(|x: &[f64]| (std::f64::consts::PI * x[0]).sin());
        let g = TimeField::new(|x: &[f64], t: f64| 0.2 * (x[0] + t).sin());
        let u0_up = {
            let u0 = u0.clone();
            ScalarField::new(move |x: &[f64]| u0.eval(x) + 1.0)
        };
        let g_up = {
            let g = g.clone();
            TimeField::new(move |x: &[f64], t: f64| g.eval(x, t) + 1.0)
        };
        let pa = line_problem(OperatorKind::DriftDiffusion, 1.0 / 64.0, 0.15, u0_up, g_up, 0.05);
        let pb = line_problem(OperatorKind::DriftDiffusion, 1.0 / 64.0, 0.15, u0, g, 0.05);
        let table = assemble_rates(&pa).unwrap();
        let report = check_comparison(&pa, &pb, table.dt_max).unwrap();
        assert!((report.min_gap - 1.0).abs() < 1e-10, "{}", report.min_gap);
    }

    #[test]
    fn comparison_ordered_random_data_stays_ordered() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let c1: f64 = rng.random_range(0.2..1.0);
            let c2: f64 = rng.random_range(0.2..1.0);
            let bump: f64 = rng.random_range(0.0..0.5);
            let u0b = ScalarField::new(move |x: &[f64]| (c1 * std::f64::consts::PI * x[0]).sin() * c2);
            let u0a = {
                let u0b = u0b.clone();
                ScalarField::new(move |x: &[f64]| u0b.eval(x) + bump * x[0].cos())
            };
            let gb = TimeField::new(move |x: &[f64], t: f64| c2 * (x[0] - t).sin());
            let ga = {
                let gb = gb.clone();
                TimeField::new(move |x: &[f64], t: f64| gb.eval(x, t) + bump)
            };
            let pa = line_problem(OperatorKind::Convolution, 1.0 / 64.0, 0.15, u0a, ga, 0.04);
            let pb = line_problem(OperatorKind::Convolution, 1.0 / 64.0, 0.15, u0b, gb, 0.04);
            let table = assemble_rates(&pa).unwrap();
            let report = check_comparison(&pa, &pb, table.dt_max).unwrap();
            assert!(report.ordered, "violation at {:?}", report.argmin);
        }
    }
}
