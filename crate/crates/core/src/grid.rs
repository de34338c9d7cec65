//! Axis-aligned uniform grids over coordinate boxes, with multilinear
//! interpolation. Solver grids are limited to three axes, which covers the
//! built-in group catalog.

use crate::error::{Error, Result};

pub const MAX_GRID_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    node_count: usize,
}

/// Position of a point inside a grid cell: flat index of the lower corner
/// node plus fractional offsets along each axis.
#[derive(Debug, Clone, Copy)]
pub struct CellLocation {
    pub base: u32,
    pub fracs: [f64; MAX_GRID_DIM],
}

impl GridSpec {
    /// Build a grid over the box with the requested spacing per axis. The
    /// spacing must divide each extent to within one part in 1e6.
    pub fn new(bounds: &[(f64, f64)], spacing: &[f64]) -> Result<Self> {
        let dim = bounds.len();
        if dim == 0 || dim > MAX_GRID_DIM {
            return Err(Error::InvalidGrid(format!(
                "grids support 1 to {MAX_GRID_DIM} axes, got {dim}"
            )));
        }
        if spacing.len() != dim {
            return Err(Error::InvalidGrid("one spacing per axis required".into()));
        }
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        let mut cells = Vec::with_capacity(dim);
        let mut h = Vec::with_capacity(dim);
        for (axis, (&(a, b), &s)) in bounds.iter().zip(spacing).enumerate() {
            if !(b > a) {
                return Err(Error::EmptyDomain(format!("axis {axis} has empty extent")));
            }
            if !(s > 0.0) {
                return Err(Error::InvalidGrid(format!("axis {axis} spacing must be positive")));
            }
            let n = (b - a) / s;
            let rounded = n.round();
            if rounded < 2.0 {
                return Err(Error::EmptyDomain(format!(
                    "axis {axis} needs at least 2 cells for an interior"
                )));
            }
            if (n - rounded).abs() > 1e-6 * rounded {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: spacing {s} does not divide extent {}",
                    b - a
                )));
            }
            let n = rounded as usize;
            lo.push(a);
            hi.push(b);
            cells.push(n);
            h.push((b - a) / n as f64);
        }
        let mut strides = vec![0usize; dim];
        let mut acc = 1usize;
        for axis in (0..dim).rev() {
            strides[axis] = acc;
            acc = acc.checked_mul(cells[axis] + 1).ok_or_else(|| {
                Error::InvalidGrid("grid too large for flat indexing".into())
            })?;
        }
        Ok(GridSpec { lo, hi, cells, h, strides, node_count: acc })
    }

    pub fn uniform(bounds: &[(f64, f64)], spacing: f64) -> Result<Self> {
        GridSpec::new(bounds, &vec![spacing; bounds.len()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo.iter().copied().zip(self.hi.iter().copied()).collect()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        self.strides
            .iter()
            .zip(&self.cells)
            .map(|(&stride, &c)| {
                let i = rest / stride;
                rest %= stride;
                debug_assert!(i <= c);
                i
            })
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(&i, &s)| i * s).sum()
    }

    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.lo[axis] + i as f64 * self.h[axis])
            .collect()
    }

    /// A node is boundary when any index sits at the box edge; open-box
    /// Dirichlet data lives there.
    pub fn is_boundary(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.cells)
            .any(|(&i, &c)| i == 0 || i == c)
    }

    /// Flat indices of strictly interior nodes, in flat order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&i| !self.is_boundary(i)).collect()
    }

    pub fn interior_count(&self) -> usize {
        self.cells.iter().map(|&c| c - 1).product()
    }

    /// Locate a point strictly inside the open box; boundary and exterior
    /// points return None.
    pub fn locate(&self, point: &[f64]) -> Option<CellLocation> {
        let dim = self.dim();
        let mut base = 0usize;
        let mut fracs = [0.0; MAX_GRID_DIM];
        for axis in 0..dim {
            let p = point[axis];
            if !(p > self.lo[axis] && p < self.hi[axis]) {
                return None;
            }
            let rel = (p - self.lo[axis]) / self.h[axis];
            let mut cell = rel.floor() as usize;
            if cell >= self.cells[axis] {
                cell = self.cells[axis] - 1;
            }
            base += cell * self.strides[axis];
            fracs[axis] = rel - cell as f64;
        }
        Some(CellLocation { base: base as u32, fracs })
    }

    /// Multilinear interpolation of nodal values at a located point.
    #[inline]
    pub fn interpolate(&self, values: &[f64], loc: &CellLocation) -> f64 {
        let dim = self.dim();
        let base = loc.base as usize;
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut idx = base;
            for axis in 0..dim {
                if corner >> axis & 1 == 1 {
                    weight *= loc.fracs[axis];
                    idx += self.strides[axis];
                } else {
                    weight *= 1.0 - loc.fracs[axis];
                }
            }
            if weight != 0.0 {
                acc += weight * values[idx];
            }
        }
        acc
    }

    pub fn max_extent(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_and_indexes() {
        let g = GridSpec::uniform(&[(0.0, 1.0), (0.0, 2.0)], 0.5).unwrap();
        assert_eq!(g.node_count(), 3 * 5);
        assert_eq!(g.interior_count(), 1 * 3);
        let flat = g.flat_index(&[1, 2]);
        assert_eq!(g.multi_index(flat), vec![1, 2]);
        assert_eq!(g.node_coords(flat), vec![0.5, 1.0]);
        assert!(!g.is_boundary(flat));
        assert!(g.is_boundary(g.flat_index(&[0, 2])));
    }

    #[test]
    fn rejects_bad_spacing_and_empty_boxes() {
        assert!(GridSpec::uniform(&[(0.0, 1.0)], 0.3).is_err());
        assert!(GridSpec::uniform(&[(0.0, 0.0)], 0.1).is_err());
        assert!(GridSpec::uniform(&[(0.0, 1.0)], 0.6).is_err());
        assert!(GridSpec::uniform(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)], 0.5).is_err());
    }

    #[test]
    fn locate_classifies_openness() {
        let g = GridSpec::uniform(&[(0.0, 1.0)], 0.25).unwrap();
        assert!(g.locate(&[0.0]).is_none());
        assert!(g.locate(&[1.0]).is_none());
        assert!(g.locate(&[-0.1]).is_none());
        assert!(g.locate(&[1.1]).is_none());
        let loc = g.locate(&[0.6]).unwrap();
        assert_eq!(loc.base, 2);
        assert!((loc.fracs[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let g = GridSpec::uniform(&[(0.0, 1.0), (0.0, 1.0)], 0.25).unwrap();
        let values: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let c = g.node_coords(i);
                2.0 * c[0] - 3.0 * c[1] + 0.5
            })
            .collect();
        for p in [[0.3, 0.7], [0.1, 0.05], [0.99, 0.42]] {
            let loc = g.locate(&p).unwrap();
            let got = g.interpolate(&values, &loc);
            let expected = 2.0 * p[0] - 3.0 * p[1] + 0.5;
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_of_constants_is_tight() {
        let g = GridSpec::uniform(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)], 0.25).unwrap();
        let values = vec![7.5; g.node_count()];
        let loc = g.locate(&[0.13, 0.57, 0.89]).unwrap();
        assert!((g.interpolate(&values, &loc) - 7.5).abs() < 1e-14);
    }
}
