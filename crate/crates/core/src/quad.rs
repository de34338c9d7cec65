//! Gauss-Legendre quadrature: 1D rules by Newton iteration on the Legendre
//! recurrence, plus a tensor-product iterator over coordinate cubes.

/// A 1D Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for k in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[k] = -x;
            weights[k] = w;
            nodes[n - 1 - k] = x;
            weights[n - 1 - k] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn scaled(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let nodes = self.nodes.iter().map(|x| mid + half * x).collect();
        let weights = self.weights.iter().map(|w| w * half).collect();
        (nodes, weights)
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let (nodes, weights) = self.scaled(a, b);
        nodes.iter().zip(&weights).map(|(x, w)| w * f(*x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product nodes over the cube [-r, r]^dim, flattened with combined
/// weights. Node coordinates are stored contiguously per point.
pub fn tensor_cube(rule: &GaussLegendre, dim: usize, r: f64) -> (Vec<f64>, Vec<f64>) {
    let (axis_nodes, axis_weights) = rule.scaled(-r, r);
    let n = rule.len();
    let total = n.pow(dim as u32);
    let mut nodes = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let mut w = 1.0;
        for (axis, &i) in idx.iter().enumerate() {
            nodes.push(axis_nodes[i]);
            let _ = axis;
            w *= axis_weights[i];
        }
        weights.push(w);
        // Odometer increment, last axis fastest.
        for axis in (0..dim).rev() {
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_point_nodes_match_reference() {
        let rule = GaussLegendre::new(5);
        // Classic 5-point abscissae.
        let expected = [
            -0.906179845938664,
            -0.538469310105683,
            0.0,
            0.538469310105683,
            0.906179845938664,
        ];
        for (x, e) in rule.nodes.iter().zip(expected.iter()) {
            assert!((x - e).abs() < 1e-14);
        }
        let wsum: f64 = rule.weights.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_for_low_degree_polynomials() {
        let rule = GaussLegendre::new(8);
        // Degree 15 is the exactness limit for 8 nodes.
        for k in 0..=15usize {
            let val = rule.integrate(-1.0, 1.0, |x| x.powi(k as i32));
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((val - exact).abs() < 1e-13, "k = {k}: {val} vs {exact}");
        }
    }

    #[test]
    fn scaled_interval() {
        let rule = GaussLegendre::new(16);
        let val = rule.integrate(0.0, 2.0, |x| x * x);
        assert!((val - 8.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn tensor_cube_integrates_monomials() {
        let rule = GaussLegendre::new(12);
        let (nodes, weights) = tensor_cube(&rule, 2, 1.0);
        let mut acc = 0.0;
        for (pt, w) in nodes.chunks(2).zip(&weights) {
            acc += w * pt[0] * pt[0] * pt[1].powi(4);
        }
        // int x^2 dx * int y^4 dy over [-1,1]^2 = (2/3)(2/5).
        assert!((acc - 4.0 / 15.0).abs() < 1e-13);
    }

    #[test]
    fn large_rule_stays_accurate() {
        let rule = GaussLegendre::new(64);
        let val = rule.integrate(-1.0, 1.0, |x| (5.0 * x).cos());
        let exact = 2.0 * 5.0_f64.sin() / 5.0;
        assert!((val - exact).abs() < 1e-13);
    }
}
