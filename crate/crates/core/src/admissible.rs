//! Discretized admissible manifolds: graphs of functions from a ball in the
//! expanding coordinates to the contracting coordinates, stored as Chebyshev
//! node values plus exact node derivatives, with class-membership checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cheb::ChebGrid;
use crate::error::{Error, Result};
use crate::linalg;

/// Class parameters (r, tau, sigma, kappa, gamma) with Hölder exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub r: f64,
    pub tau: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl ClassParams {
    pub fn through_origin(r: f64, kappa: f64, gamma: f64, alpha: f64) -> Self {
        ClassParams { r, tau: 0.0, sigma: 0.0, kappa, gamma, alpha }
    }
}

/// Default per-axis polynomial degree for one-dimensional domains.
pub const DEFAULT_DEGREE_1D: usize = 16;
/// Degree cap for tensor grids in two or more expanding dimensions.
pub const DEFAULT_DEGREE_ND: usize = 8;

pub fn default_degree(k: usize) -> usize {
    if k == 1 {
        DEFAULT_DEGREE_1D
    } else {
        DEFAULT_DEGREE_ND
    }
}

/// Graph of psi: B^u(r) -> E^s sampled on a Chebyshev grid, with derivative
/// data at every node.
#[derive(Debug, Clone)]
pub struct AdmissibleManifold {
    grid: ChebGrid,
    s_dim: usize,
    values: Vec<DVector<f64>>,
    derivs: Vec<DMatrix<f64>>,
    params: ClassParams,
}

impl AdmissibleManifold {
    pub fn from_parts(
        grid: ChebGrid,
        s_dim: usize,
        values: Vec<DVector<f64>>,
        derivs: Vec<DMatrix<f64>>,
        params: ClassParams,
    ) -> Result<Self> {
        if values.len() != grid.node_count() || derivs.len() != grid.node_count() {
            return Err(Error::Config("node data does not match grid".into()));
        }
        Ok(AdmissibleManifold { grid, s_dim, values, derivs, params })
    }

    /// The zero graph.
    pub fn zero(k: usize, s_dim: usize, degree: usize, params: ClassParams) -> Self {
        let grid = ChebGrid::new(k, degree, params.r);
        let n = grid.node_count();
        AdmissibleManifold {
            grid,
            s_dim,
            values: vec![DVector::zeros(s_dim); n],
            derivs: vec![DMatrix::zeros(s_dim, k); n],
            params,
        }
    }

    /// Sample a function (and optionally its exact derivative) on the grid.
    /// Without an analytic derivative the nodes get the interpolant's.
    pub fn from_fn<F, G>(
        k: usize,
        s_dim: usize,
        degree: usize,
        params: ClassParams,
        f: F,
        df: Option<G>,
    ) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
        G: Fn(&DVector<f64>) -> DMatrix<f64>,
    {
        let grid = ChebGrid::new(k, degree, params.r);
        let n = grid.node_count();
        let values: Vec<DVector<f64>> = (0..n).map(|i| f(&grid.point(i))).collect();
        let derivs: Vec<DMatrix<f64>> = match df {
            Some(g) => (0..n).map(|i| g(&grid.point(i))).collect(),
            None => (0..n).map(|i| grid.eval_jacobian(&values, &grid.point(i))).collect(),
        };
        AdmissibleManifold { grid, s_dim, values, derivs, params }
    }

    pub fn grid(&self) -> &ChebGrid {
        &self.grid
    }

    pub fn u_dim(&self) -> usize {
        self.grid.k()
    }

    pub fn s_dim(&self) -> usize {
        self.s_dim
    }

    pub fn radius(&self) -> f64 {
        self.params.r
    }

    pub fn params(&self) -> &ClassParams {
        &self.params
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn derivs(&self) -> &[DMatrix<f64>] {
        &self.derivs
    }

    pub fn with_params(mut self, params: ClassParams) -> Self {
        self.params = params;
        self
    }

    /// Evaluate psi at v (rejects |v| > r).
    pub fn evaluate(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = v.norm();
        if norm > self.params.r * (1.0 + 1e-12) {
            return Err(Error::OutOfDomain { norm, r: self.params.r });
        }
        Ok(self.grid.eval_vector(&self.values, v))
    }

    /// Evaluate without the domain guard (used by probes slightly outside).
    pub fn evaluate_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        self.grid.eval_vector(&self.values, v)
    }

    /// D psi at v, interpolated from the stored node derivatives.
    pub fn derivative(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let norm = v.norm();
        if norm > self.params.r * (1.0 + 1e-12) {
            return Err(Error::OutOfDomain { norm, r: self.params.r });
        }
        Ok(self.derivative_unchecked(v))
    }

    pub fn derivative_unchecked(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let k = self.u_dim();
        let mut out = DMatrix::zeros(self.s_dim, k);
        for col in 0..k {
            let col_field: Vec<DVector<f64>> =
                self.derivs.iter().map(|d| d.column(col).into_owned()).collect();
            out.set_column(col, &self.grid.eval_vector(&col_field, v));
        }
        out
    }

    /// Derivative of the value interpolant itself (self-consistency probe).
    pub fn interpolant_derivative(&self, v: &DVector<f64>) -> DMatrix<f64> {
        self.grid.eval_jacobian(&self.values, v)
    }

    /// Max gap between stored node derivatives and the interpolant's
    /// derivative at the nodes.
    pub fn derivative_consistency(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.node_count() {
            let p = self.grid.point(i);
            let gap = &self.derivs[i] - self.interpolant_derivative(&p);
            worst = worst.max(linalg::spectral_norm(&gap));
        }
        worst
    }

    /// Sampled Hölder quotient of D psi: all node pairs from stored
    /// derivatives plus near-diagonal interpolated refinements.
    pub fn holder_quotient(&self, alpha: f64) -> f64 {
        let n = self.grid.node_count();
        let mut best: f64 = 0.0;
        for i in 0..n {
            let pi = self.grid.point(i);
            for j in (i + 1)..n {
                let pj = self.grid.point(j);
                let dist = (&pi - &pj).norm();
                if dist < 1e-14 * self.params.r.max(1e-300) {
                    continue;
                }
                let gap = linalg::spectral_norm(&(&self.derivs[i] - &self.derivs[j]));
                best = best.max(gap / dist.powf(alpha));
            }
        }
        // near-diagonal refinement through the interpolant
        let delta = 1e-3 * self.params.r;
        for i in 0..n {
            let pi = self.grid.point(i);
            for axis in 0..self.u_dim() {
                let mut q = pi.clone();
                q[axis] += if pi[axis] > 0.0 { -delta } else { delta };
                let gap = linalg::spectral_norm(&(&self.derivs[i] - self.derivative_unchecked(&q)));
                best = best.max(gap / delta.powf(alpha));
            }
        }
        best
    }

    /// Uniform-distance probe grid: 4x node density on the smaller radius.
    fn probe_points(&self, r: f64) -> Vec<DVector<f64>> {
        let probe = ChebGrid::new(self.u_dim(), self.grid.degree() * 4, r);
        (0..probe.node_count())
            .map(|i| probe.point(i))
            .filter(|p| p.norm() <= r * (1.0 + 1e-12))
            .collect()
    }
}

/// Measured quantities and flags of a class-membership check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub offset: f64,
    pub tilt: f64,
    pub holder: f64,
    pub max_slope: f64,
    pub offset_ok: bool,
    pub tilt_ok: bool,
    pub holder_ok: bool,
    pub slope_ok: bool,
    /// Derived bound sigma + kappa r^alpha on the slope.
    pub derived_slope_bound: f64,
    pub member: bool,
}

/// Default multiplicative slack absorbing sampling bias of the Hölder
/// estimator.
pub const CLASS_SLACK: f64 = 0.05;

/// Check membership of the manifold in the class with the given parameters.
pub fn class_check(m: &AdmissibleManifold, params: &ClassParams, slack: f64) -> ClassReport {
    let origin = DVector::zeros(m.u_dim());
    let offset = m.evaluate_unchecked(&origin).norm();
    let tilt = linalg::spectral_norm(&m.derivative_unchecked(&origin));
    let holder = m.holder_quotient(params.alpha);
    let max_slope = (0..m.grid.node_count())
        .map(|i| linalg::spectral_norm(&m.derivs[i]))
        .fold(0.0, f64::max);
    // absolute floors absorb interpolation-level rounding noise when a class
    // parameter is exactly zero
    let value_scale = m.values.iter().map(|v| v.norm()).fold(1e-300_f64, f64::max);
    let deriv_scale = (0..m.grid.node_count())
        .map(|i| linalg::spectral_norm(&m.derivs[i]))
        .fold(1e-300_f64, f64::max);
    let tol = 1e-12;
    let offset_ok = offset <= params.tau * (1.0 + tol) + 1e-12 * value_scale;
    let tilt_ok = tilt <= params.sigma * (1.0 + tol) + 1e-12 * deriv_scale;
    let holder_ok = holder
        <= params.kappa * (1.0 + slack)
            + 1e-11 * deriv_scale / params.r.max(1e-300).powf(params.alpha);
    let slope_ok = max_slope <= params.gamma * (1.0 + tol) + 1e-12 * deriv_scale;
    ClassReport {
        offset,
        tilt,
        holder,
        max_slope,
        offset_ok,
        tilt_ok,
        holder_ok,
        slope_ok,
        derived_slope_bound: params.sigma + params.kappa * params.r.powf(params.alpha),
        member: offset_ok && tilt_ok && holder_ok && slope_ok,
    }
}

/// C0 distance between two graphs over the smaller radius, probed at 4x node
/// density.
pub fn c0_distance(a: &AdmissibleManifold, b: &AdmissibleManifold) -> f64 {
    let r = a.radius().min(b.radius());
    let mut worst: f64 = 0.0;
    for p in a.probe_points(r) {
        let gap = (a.evaluate_unchecked(&p) - b.evaluate_unchecked(&p)).norm();
        worst = worst.max(gap);
    }
    worst
}

/// Serialized form of a manifold; round-trips bit-exactly through JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifoldDump {
    pub k: usize,
    pub s_dim: usize,
    pub r: f64,
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
    pub params: ClassParams,
}

impl AdmissibleManifold {
    pub fn dump(&self) -> ManifoldDump {
        ManifoldDump {
            k: self.u_dim(),
            s_dim: self.s_dim,
            r: self.grid.radius(),
            degree: self.grid.degree(),
            nodes: self.grid.nodes_1d().to_vec(),
            values: self.values.iter().map(|v| v.iter().cloned().collect()).collect(),
            derivs: self
                .derivs
                .iter()
                .map(|d| d.transpose().iter().cloned().collect())
                .collect(),
            params: self.params,
        }
    }

    pub fn from_dump(dump: &ManifoldDump) -> Result<Self> {
        let grid = ChebGrid::new(dump.k, dump.degree, dump.r);
        let values: Vec<DVector<f64>> =
            dump.values.iter().map(|v| DVector::from_vec(v.clone())).collect();
        let derivs: Vec<DMatrix<f64>> = dump
            .derivs
            .iter()
            .map(|d| DMatrix::from_row_slice(dump.s_dim, dump.k, d))
            .collect();
        AdmissibleManifold::from_parts(grid, dump.s_dim, values, derivs, dump.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.dump())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: ManifoldDump = serde_json::from_str(s)?;
        AdmissibleManifold::from_dump(&dump)
    }
}
