//! Chebyshev (Gauss–Lobatto) tensor grids with barycentric evaluation and
//! spectral differentiation. Used to discretize graphs of admissible
//! manifolds.

use nalgebra::{DMatrix, DVector};

/// Tensor Chebyshev grid on the cube [-r, r]^k, same degree per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebGrid {
    k: usize,
    degree: usize,
    r: f64,
    /// 1-D nodes scaled to [-r, r], in the order cos(j*pi/deg), j = 0..=deg.
    nodes: Vec<f64>,
    bary: Vec<f64>,
    /// 1-D differentiation matrix on the scaled nodes.
    diff: DMatrix<f64>,
}

impl ChebGrid {
    pub fn new(k: usize, degree: usize, r: f64) -> Self {
        assert!(k >= 1 && degree >= 1 && r > 0.0);
        let n = degree;
        let nodes: Vec<f64> = (0..=n)
            .map(|j| r * (std::f64::consts::PI * j as f64 / n as f64).cos())
            .collect();
        let mut bary: Vec<f64> = (0..=n).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        bary[0] *= 0.5;
        bary[n] *= 0.5;
        let mut diff = DMatrix::zeros(n + 1, n + 1);
        for i in 0..=n {
            let mut row_sum = 0.0;
            for j in 0..=n {
                if i != j {
                    let d = (bary[j] / bary[i]) / (nodes[i] - nodes[j]);
                    diff[(i, j)] = d;
                    row_sum += d;
                }
            }
            // negative-sum trick keeps the diagonal consistent with exact
            // differentiation of constants
            diff[(i, i)] = -row_sum;
        }
        ChebGrid { k, degree, r, nodes, bary, diff }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn nodes_1d(&self) -> &[f64] {
        &self.nodes
    }

    pub fn points_per_axis(&self) -> usize {
        self.degree + 1
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis().pow(self.k as u32)
    }

    /// Multi-index of a flat node index; axis 0 varies fastest.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let p = self.points_per_axis();
        let mut idx = Vec::with_capacity(self.k);
        for _ in 0..self.k {
            idx.push(flat % p);
            flat /= p;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let p = self.points_per_axis();
        idx.iter().rev().fold(0, |acc, &i| acc * p + i)
    }

    /// Coordinates of node `flat` as a point in R^k.
    pub fn point(&self, flat: usize) -> DVector<f64> {
        let idx = self.multi_index(flat);
        DVector::from_iterator(self.k, idx.into_iter().map(|i| self.nodes[i]))
    }

    /// Barycentric cardinal weights l_j(t) along one axis.
    fn line_weights(&self, t: f64) -> Vec<f64> {
        let n = self.points_per_axis();
        // exact node hit: cardinal indicator
        for (j, &x) in self.nodes.iter().enumerate() {
            if t == x {
                let mut w = vec![0.0; n];
                w[j] = 1.0;
                return w;
            }
        }
        let mut num = vec![0.0; n];
        let mut denom = 0.0;
        for j in 0..n {
            let c = self.bary[j] / (t - self.nodes[j]);
            num[j] = c;
            denom += c;
        }
        for w in &mut num {
            *w /= denom;
        }
        num
    }

    fn contract(&self, values: &[f64], axis_weights: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for (flat, &val) in values.iter().enumerate() {
            let idx = self.multi_index(flat);
            let mut w = 1.0;
            for (a, &i) in idx.iter().enumerate() {
                w *= axis_weights[a][i];
            }
            acc += w * val;
        }
        acc
    }

    /// Apply the 1-D differentiation matrix along `axis` to a scalar node
    /// field.
    fn differentiate_axis(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let p = self.points_per_axis();
        let mut out = vec![0.0; values.len()];
        for flat in 0..values.len() {
            let idx = self.multi_index(flat);
            let mut acc = 0.0;
            for m in 0..p {
                let mut jdx = idx.clone();
                jdx[axis] = m;
                acc += self.diff[(idx[axis], m)] * values[self.flat_index(&jdx)];
            }
            out[flat] = acc;
        }
        out
    }

    /// Evaluate the interpolant of a scalar node field at `v` (inside the
    /// cube).
    pub fn eval_scalar(&self, values: &[f64], v: &DVector<f64>) -> f64 {
        let weights: Vec<Vec<f64>> = (0..self.k).map(|a| self.line_weights(v[a])).collect();
        self.contract(values, &weights)
    }

    /// Evaluate a vector-valued node field (one `DVector` per node).
    pub fn eval_vector(&self, values: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
        let m = values[0].len();
        let weights: Vec<Vec<f64>> = (0..self.k).map(|a| self.line_weights(v[a])).collect();
        DVector::from_iterator(
            m,
            (0..m).map(|c| {
                let field: Vec<f64> = values.iter().map(|val| val[c]).collect();
                self.contract(&field, &weights)
            }),
        )
    }

    /// Jacobian of the vector-valued interpolant at `v`: an m-by-k matrix.
    pub fn eval_jacobian(&self, values: &[DVector<f64>], v: &DVector<f64>) -> DMatrix<f64> {
        let m = values[0].len();
        let weights: Vec<Vec<f64>> = (0..self.k).map(|a| self.line_weights(v[a])).collect();
        let mut jac = DMatrix::zeros(m, self.k);
        for c in 0..m {
            let field: Vec<f64> = values.iter().map(|val| val[c]).collect();
            for a in 0..self.k {
                let dfield = self.differentiate_axis(&field, a);
                jac[(c, a)] = self.contract(&dfield, &weights);
            }
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reproduces_low_degree_polynomials_exactly() {
        let g = ChebGrid::new(1, 16, 1.0);
        let values: Vec<DVector<f64>> = (0..g.node_count())
            .map(|i| {
                let x = g.point(i)[0];
                DVector::from_vec(vec![x * x])
            })
            .collect();
        let v = DVector::from_vec(vec![0.5]);
        assert_relative_eq!(g.eval_vector(&values, &v)[0], 0.25, epsilon = 1e-13);
        assert_relative_eq!(g.eval_jacobian(&values, &v)[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tensor_grid_reproduces_bilinear() {
        let g = ChebGrid::new(2, 4, 2.0);
        let values: Vec<DVector<f64>> = (0..g.node_count())
            .map(|i| {
                let p = g.point(i);
                DVector::from_vec(vec![3.0 * p[0] * p[1] + p[0]])
            })
            .collect();
        let v = DVector::from_vec(vec![0.7, -1.1]);
        assert_relative_eq!(g.eval_vector(&values, &v)[0], 3.0 * 0.7 * -1.1 + 0.7, epsilon = 1e-12);
        let jac = g.eval_jacobian(&values, &v);
        assert_relative_eq!(jac[(0, 0)], 3.0 * -1.1 + 1.0, epsilon = 1e-11);
        assert_relative_eq!(jac[(0, 1)], 3.0 * 0.7, epsilon = 1e-11);
    }

    #[test]
    fn spectral_convergence_on_smooth_function() {
        // doubling the degree should shrink the error by 10x or more until
        // the 1e-12 floor
        let f = |x: f64| (2.0 * x).sin() * (-x).exp();
        let probe = DVector::from_vec(vec![0.37]);
        let mut last_err = f64::INFINITY;
        for deg in [4usize, 8, 16, 32] {
            let g = ChebGrid::new(1, deg, 1.0);
            let values: Vec<DVector<f64>> =
                (0..g.node_count()).map(|i| DVector::from_vec(vec![f(g.point(i)[0])])).collect();
            let err = (g.eval_vector(&values, &probe)[0] - f(0.37)).abs();
            if last_err > 1e-12 && err > 1e-13 {
                assert!(err <= last_err / 10.0, "deg {deg}: {err} vs {last_err}");
            }
            last_err = err;
        }
        assert!(last_err < 1e-12);
    }
}
