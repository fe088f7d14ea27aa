//! Sequences of local diffeomorphisms fixing the origin, their invariant
//! splittings, and the linear data (expansion/contraction rates, angles,
//! Hölder bounds) that the rest of the toolkit consumes.
//!
//! A `Germ` is one local map together with its Jacobian and a domain box; a
//! `GermSequence` is an indexed family of germs, each mapping the chart at
//! index n into the chart at index n+1. All types are immutable after
//! construction and all operations are pure.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub type MapFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Tolerance below which an evaluated origin image counts as fixed.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Largest fixed-point shift that is silently absorbed by translation.
pub const FIXED_POINT_SHIFT_MAX: f64 = 1e-6;
/// Default tolerance on the splitting invariance residual.
pub const SPLITTING_TOL: f64 = 1e-10;

/// Axis-aligned domain box containing the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl DomainBox {
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        DomainBox {
            lo: DVector::from_element(dim, -half_width),
            hi: DVector::from_element(dim, half_width),
        }
    }

    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.iter().any(|&l| l > 0.0) || hi.iter().any(|&h| h < 0.0) {
            return Err(Error::Config("domain box must contain the origin".into()));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &xi)| xi >= self.lo[i] && xi <= self.hi[i])
    }

    /// Largest h such that the Euclidean ball B(0, h) fits inside the box.
    pub fn inradius(&self) -> f64 {
        self.lo
            .iter()
            .map(|l| -l)
            .chain(self.hi.iter().cloned())
            .fold(f64::INFINITY, f64::min)
    }

    fn translated(&self, p: &DVector<f64>) -> Self {
        DomainBox { lo: &self.lo - p, hi: &self.hi - p }
    }
}

/// One local diffeomorphism fixing the origin.
#[derive(Clone)]
pub struct Germ {
    dim: usize,
    map: MapFn,
    jac: Option<JacFn>,
    domain: DomainBox,
}

impl std::fmt::Debug for Germ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Germ")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl Germ {
    /// Build a germ, enforcing f(0) = 0. Maps whose computed fixed point lies
    /// within `FIXED_POINT_SHIFT_MAX` of the origin are translated onto it;
    /// anything farther away is rejected.
    pub fn new(dim: usize, map: MapFn, jac: Option<JacFn>, domain: DomainBox) -> Result<Self> {
        let mut germ = Germ { dim, map, jac, domain };
        let at_origin = germ.eval(&DVector::zeros(dim));
        if at_origin.norm() <= FIXED_POINT_TOL {
            return Ok(germ);
        }
        let p = germ.find_fixed_point()?;
        if p.norm() > FIXED_POINT_SHIFT_MAX {
            return Err(Error::PreconditionViolated(format!(
                "germ does not fix the origin: fixed point at distance {:.3e}",
                p.norm()
            )));
        }
        let inner_map = germ.map.clone();
        let shift = p.clone();
        germ.map = Arc::new(move |x: &DVector<f64>| inner_map(&(x + &shift)) - &shift);
        if let Some(j) = germ.jac.clone() {
            let shift = p.clone();
            germ.jac = Some(Arc::new(move |x: &DVector<f64>| j(&(x + &shift))));
        }
        germ.domain = germ.domain.translated(&p);
        Ok(germ)
    }

    /// Linear germ x -> a x on a symmetric box.
    pub fn linear(a: DMatrix<f64>, half_width: f64) -> Self {
        let dim = a.nrows();
        let a2 = a.clone();
        Germ {
            dim,
            map: Arc::new(move |x: &DVector<f64>| &a * x),
            jac: Some(Arc::new(move |_: &DVector<f64>| a2.clone())),
            domain: DomainBox::symmetric(dim, half_width),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.map)(x)
    }

    /// Address of the shared map closure; clones of one germ share it, which
    /// lets per-germ probe results be cached across repeated germs.
    pub fn map_addr(&self) -> usize {
        Arc::as_ptr(&self.map) as *const () as usize
    }

    /// Jacobian, analytic when supplied, otherwise central differences with
    /// step 1e-6 * max(1, |x|).
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.jac {
            return j(x);
        }
        let h = 1e-6 * x.norm().max(1.0);
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let col = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
            m.set_column(i, &col);
        }
        m
    }

    fn find_fixed_point(&self) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(self.dim);
        for _ in 0..50 {
            let fx = self.eval(&x);
            let res = &fx - &x;
            if res.norm() <= FIXED_POINT_TOL {
                return Ok(x);
            }
            let j = self.jacobian(&x) - DMatrix::identity(self.dim, self.dim);
            let step = linalg::solve(&j, &res).ok_or_else(|| {
                Error::PreconditionViolated("singular Jacobian in fixed-point search".into())
            })?;
            x -= step;
            if x.norm() > 1.0 {
                break;
            }
        }
        Err(Error::PreconditionViolated(
            "fixed-point search near the origin did not converge".into(),
        ))
    }

    /// Invert y = f(x) by Newton seeded at Df(0)^{-1} y.
    pub fn invert_point(&self, y: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        let j0 = self.jacobian(&DVector::zeros(self.dim));
        let mut x = linalg::solve(&j0, y)
            .ok_or_else(|| Error::PreconditionViolated("singular Jacobian at origin".into()))?;
        for _ in 0..64 {
            let res = self.eval(&x) - y;
            if res.norm() <= tol {
                return Ok(x);
            }
            let j = self.jacobian(&x);
            let step = linalg::solve(&j, &res)
                .ok_or_else(|| Error::PreconditionViolated("singular Jacobian in inversion".into()))?;
            x -= step;
        }
        let res = (self.eval(&x) - y).norm();
        Err(Error::NewtonFail { node: 0, residual: res })
    }

    /// Inverse germ with an analytic inverse Jacobian and a conservatively
    /// shrunk domain box.
    pub fn inverse(&self, domain_shrink: f64) -> Germ {
        let fwd = self.clone();
        let fwd_jac = self.clone();
        let j0 = self.jacobian(&DVector::zeros(self.dim));
        let scale = linalg::smallest_singular_value(&j0).min(1.0) * domain_shrink;
        let hw = self.domain.inradius() * scale;
        Germ {
            dim: self.dim,
            map: Arc::new(move |y: &DVector<f64>| {
                fwd.invert_point(y, 1e-13).expect("inverse germ evaluation failed")
            }),
            jac: Some(Arc::new(move |y: &DVector<f64>| {
                let x = fwd_jac.invert_point(y, 1e-13).expect("inverse germ evaluation failed");
                fwd_jac
                    .jacobian(&x)
                    .try_inverse()
                    .expect("singular Jacobian in inverse germ")
            })),
            domain: DomainBox::symmetric(self.dim, hw),
        }
    }
}

/// Indexed family {f_n} of germs, n in [first, first + len).
#[derive(Debug, Clone)]
pub struct GermSequence {
    germs: Vec<Germ>,
    first: i64,
    alpha: f64,
    rate_bound: f64,
}

impl GermSequence {
    pub fn new(germs: Vec<Germ>, first: i64, alpha: f64, rate_bound: f64) -> Result<Self> {
        if germs.is_empty() {
            return Err(Error::Config("germ sequence must be nonempty".into()));
        }
        if !(0.0 < alpha && alpha <= 1.0) {
            return Err(Error::Config("Hölder exponent must lie in (0, 1]".into()));
        }
        let dim = germs[0].dim();
        if germs.iter().any(|g| g.dim() != dim) {
            return Err(Error::Config("all germs must share one dimension".into()));
        }
        Ok(GermSequence { germs, first, alpha, rate_bound })
    }

    pub fn dim(&self) -> usize {
        self.germs[0].dim()
    }

    pub fn len(&self) -> usize {
        self.germs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.germs.is_empty()
    }

    /// First germ index n_min; germs exist for n in [n_min, n_max].
    pub fn first_index(&self) -> i64 {
        self.first
    }

    pub fn last_index(&self) -> i64 {
        self.first + self.germs.len() as i64 - 1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Global rate bound L.
    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    pub fn germ(&self, n: i64) -> &Germ {
        &self.germs[(n - self.first) as usize]
    }

    pub fn germs(&self) -> &[Germ] {
        &self.germs
    }

    /// Sequence of inverse germs traversed in reversed index order, mapping
    /// chart last+1 back to chart first. Splittings must be reversed to
    /// match.
    pub fn inverted(&self, domain_shrink: f64) -> Result<GermSequence> {
        let germs: Vec<Germ> =
            self.germs.iter().rev().map(|g| g.inverse(domain_shrink)).collect();
        GermSequence::new(germs, 0, self.alpha, self.rate_bound)
    }

    /// Same germs with the index range shifted to start at `new_first`.
    pub fn rebase(mut self, new_first: i64) -> GermSequence {
        self.first = new_first;
        self
    }
}

/// Compose F_{m,n} = f_{n-1} o ... o f_m applied to x, tracking domain
/// membership stepwise. m = n is the identity.
pub fn compose(seq: &GermSequence, m: i64, n: i64, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(compose_orbit(seq, m, n, x)?.pop().expect("orbit nonempty"))
}

/// As `compose` but returning all intermediate points x_m .. x_n.
pub fn compose_orbit(
    seq: &GermSequence,
    m: i64,
    n: i64,
    x: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    if m > n || m < seq.first_index() || n > seq.last_index() + 1 {
        return Err(Error::Config(format!(
            "composition range [{m}, {n}) outside germ index range"
        )));
    }
    let mut pts = Vec::with_capacity((n - m) as usize + 1);
    let mut cur = x.clone();
    pts.push(cur.clone());
    for k in m..n {
        let g = seq.germ(k);
        if !g.domain().contains(&cur) {
            return Err(Error::DomainExit { at: k });
        }
        cur = g.eval(&cur);
        pts.push(cur.clone());
    }
    Ok(pts)
}

/// Product of Jacobians DF_{m,n} along the orbit of x, with domain checks.
pub fn jacobian_product(
    seq: &GermSequence,
    m: i64,
    n: i64,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let orbit = compose_orbit(seq, m, n, x)?;
    let d = seq.dim();
    let mut acc = DMatrix::identity(d, d);
    for (i, k) in (m..n).enumerate() {
        acc = seq.germ(k).jacobian(&orbit[i]) * acc;
    }
    Ok(acc)
}

/// Invariant splitting: orthonormal bases of E_n^u and E_n^s for every state
/// index n in [first, first + len).
#[derive(Debug, Clone)]
pub struct Splitting {
    first: i64,
    u: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
}

impl Splitting {
    pub fn new(first: i64, u: Vec<DMatrix<f64>>, s: Vec<DMatrix<f64>>) -> Result<Self> {
        if u.len() != s.len() || u.is_empty() {
            return Err(Error::Config("splitting bases must align and be nonempty".into()));
        }
        let d = u[0].nrows();
        let k = u[0].ncols();
        for (uu, ss) in u.iter().zip(&s) {
            if uu.nrows() != d || ss.nrows() != d || uu.ncols() != k || ss.ncols() != d - k {
                return Err(Error::Config("splitting bases have inconsistent shapes".into()));
            }
        }
        let u = u.iter().map(linalg::orthonormalize).collect();
        let s = s.iter().map(linalg::orthonormalize).collect();
        Ok(Splitting { first, u, s })
    }

    /// Constant splitting repeated over `len` state indices.
    pub fn constant(first: i64, len: usize, u: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        Splitting::new(first, vec![u; len], vec![s; len])
    }

    pub fn first_index(&self) -> i64 {
        self.first
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn last_index(&self) -> i64 {
        self.first + self.u.len() as i64 - 1
    }

    pub fn u_dim(&self) -> usize {
        self.u[0].ncols()
    }

    pub fn s_dim(&self) -> usize {
        self.s[0].ncols()
    }

    pub fn dim(&self) -> usize {
        self.u[0].nrows()
    }

    pub fn u_basis(&self, n: i64) -> &DMatrix<f64> {
        &self.u[(n - self.first) as usize]
    }

    pub fn s_basis(&self, n: i64) -> &DMatrix<f64> {
        &self.s[(n - self.first) as usize]
    }

    /// Combined basis C_n = [U_n | S_n] giving oblique coordinates.
    pub fn combined(&self, n: i64) -> DMatrix<f64> {
        let u = self.u_basis(n);
        let s = self.s_basis(n);
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for j in 0..u.ncols() {
            c.set_column(j, &u.column(j));
        }
        for j in 0..s.ncols() {
            c.set_column(u.ncols() + j, &s.column(j));
        }
        c
    }

    /// Oblique coordinates (v, w) of an ambient point: x = U v + S w.
    pub fn coords(&self, n: i64, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let k = self.u_dim();
        let c = self.combined(n);
        let sol = linalg::solve(&c, x).expect("splitting bases are degenerate");
        (sol.rows(0, k).into_owned(), sol.rows(k, self.s_dim()).into_owned())
    }

    /// Ambient point from oblique coordinates.
    pub fn ambient(&self, n: i64, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.u_basis(n) * v + self.s_basis(n) * w
    }

    /// Splitting for the inverted germ sequence: indices reversed and the
    /// roles of the two bundles swapped.
    pub fn reversed_swapped(&self) -> Splitting {
        let u: Vec<DMatrix<f64>> = self.s.iter().rev().cloned().collect();
        let s: Vec<DMatrix<f64>> = self.u.iter().rev().cloned().collect();
        Splitting { first: 0, u, s }
    }

    /// Same bases with the index range shifted to start at `new_first`.
    pub fn rebase(mut self, new_first: i64) -> Splitting {
        self.first = new_first;
        self
    }
}

/// Invariance residual (gap distance between Df_n(0) E_n^sigma and
/// E_{n+1}^sigma) per germ index.
pub fn splitting_invariance_residual(seq: &GermSequence, split: &Splitting) -> Vec<f64> {
    let mut out = Vec::with_capacity(seq.len());
    for n in seq.first_index()..=seq.last_index() {
        let j = seq.germ(n).jacobian(&DVector::zeros(seq.dim()));
        let mut res: f64 = 0.0;
        for (basis, next) in [
            (split.u_basis(n), split.u_basis(n + 1)),
            (split.s_basis(n), split.s_basis(n + 1)),
        ] {
            if basis.ncols() == 0 {
                continue;
            }
            let img = linalg::orthonormalize(&(&j * basis));
            res = res.max(linalg::subspace_distance(&img, next));
        }
        out.push(res);
    }
    out
}

/// Per-index rates and bounds extracted from the derivative cocycle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearData {
    /// Lower expansion exponent on E^u: |Df(0) v| >= e^{lambda_u} |v|.
    pub lambda_u: f64,
    /// Upper contraction exponent on E^s (−inf when E^s is trivial).
    pub lambda_s: f64,
    /// Lower bound on the angle between E^u and E^s, radians.
    pub theta: f64,
    /// Combined Hölder/angle constant: max(1, |Df|_alpha) <= beta sin(theta').
    pub beta: f64,
}

/// Options for the Hölder seminorm probes used while extracting linear data.
#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub holder_radius: f64,
    pub holder_samples: usize,
    pub splitting_tol: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { holder_radius: 0.1, holder_samples: 24, splitting_tol: SPLITTING_TOL }
    }
}

/// Extract the per-index linear data of the sequence along a splitting.
pub fn extract_linear_data(
    seq: &GermSequence,
    split: &Splitting,
    opts: &ExtractOptions,
) -> Result<Vec<LinearData>> {
    if split.first_index() > seq.first_index() || split.last_index() < seq.last_index() + 1 {
        return Err(Error::Config("splitting does not cover the germ index range".into()));
    }
    let residuals = splitting_invariance_residual(seq, split);
    if let Some((i, &r)) = residuals
        .iter()
        .enumerate()
        .find(|(_, &r)| r > opts.splitting_tol)
    {
        return Err(Error::PreconditionViolated(format!(
            "splitting invariance residual {r:.3e} at index {} exceeds tolerance",
            seq.first_index() + i as i64
        )));
    }
    let thetas: Vec<f64> = (seq.first_index()..=seq.last_index() + 1)
        .map(|n| linalg::minimal_principal_angle(split.u_basis(n), split.s_basis(n)))
        .collect();
    let mut out = Vec::with_capacity(seq.len());
    // repeated germs share their closures; probe each distinct one once
    let mut holder_cache: std::collections::HashMap<usize, HolderEstimate> =
        std::collections::HashMap::new();
    for n in seq.first_index()..=seq.last_index() {
        let g = seq.germ(n);
        let j0 = g.jacobian(&DVector::zeros(seq.dim()));
        let lambda_u = linalg::smallest_singular_value(&(&j0 * split.u_basis(n))).ln();
        let lambda_s = if split.s_dim() == 0 {
            f64::NEG_INFINITY
        } else {
            linalg::spectral_norm(&(&j0 * split.s_basis(n))).ln()
        };
        let i = (n - seq.first_index()) as usize;
        let holder = *holder_cache.entry(g.map_addr()).or_insert_with(|| {
            let r = opts.holder_radius.min(g.domain().inradius());
            holder_estimate(g, seq.alpha(), r, opts.holder_samples)
        });
        let sin_next = thetas[i + 1].sin();
        let beta = holder.extrapolated.max(1.0) / sin_next;
        out.push(LinearData { lambda_u, lambda_s, theta: thetas[i], beta });
    }
    Ok(out)
}

/// Cone family: per state index, center subspaces and opening angles for the
/// expanding and contracting cones.
#[derive(Debug, Clone)]
pub struct ConeField {
    pub first: i64,
    pub u_centers: Vec<DMatrix<f64>>,
    pub u_angles: Vec<f64>,
    pub s_centers: Vec<DMatrix<f64>>,
    pub s_angles: Vec<f64>,
}

impl ConeField {
    pub fn len(&self) -> usize {
        self.u_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_centers.is_empty()
    }

    pub fn last_index(&self) -> i64 {
        self.first + self.u_centers.len() as i64 - 1
    }

    fn idx(&self, n: i64) -> usize {
        (n - self.first) as usize
    }
}

/// Check that Df_n(0) maps the closed u-cone strictly inside the next u-cone
/// (and the inverse carries the s-cone backwards), probing boundary samples.
pub fn verify_cone_invariance(
    seq: &GermSequence,
    cones: &ConeField,
    boundary_samples: usize,
) -> Result<()> {
    let d = seq.dim();
    for n in seq.first_index()..=seq.last_index() {
        let j = seq.germ(n).jacobian(&DVector::zeros(d));
        let jinv = j.clone().try_inverse().ok_or_else(|| {
            Error::PreconditionViolated(format!("singular Jacobian at index {n}"))
        })?;
        let i = cones.idx(n);
        for sample in 0..boundary_samples {
            // u-cone boundary vector pushed forward
            let v = cone_boundary_vector(&cones.u_centers[i], cones.u_angles[i], sample);
            let fv = &j * &v;
            let ang = linalg::vector_subspace_angle(&fv, &cones.u_centers[i + 1]);
            if ang >= cones.u_angles[i + 1] {
                return Err(Error::ConeInvarianceFail { step: n });
            }
            // s-cone boundary vector at n+1 pulled back
            if cones.s_centers[i].ncols() > 0 {
                let w = cone_boundary_vector(&cones.s_centers[i + 1], cones.s_angles[i + 1], sample);
                let bw = &jinv * &w;
                let ang = linalg::vector_subspace_angle(&bw, &cones.s_centers[i]);
                if ang >= cones.s_angles[i] {
                    return Err(Error::ConeInvarianceFail { step: n });
                }
            }
        }
    }
    Ok(())
}

fn cone_boundary_vector(center: &DMatrix<f64>, opening: f64, sample: usize) -> DVector<f64> {
    let d = center.nrows();
    let k = center.ncols();
    let e = if k == 1 {
        center.column(0).into_owned()
    } else {
        center * linalg::halton_unit(sample, k)
    };
    // orthogonal complement direction
    let mut n = linalg::halton_unit(sample + 31, d);
    n -= center * (center.transpose() * &n);
    let nn = n.norm();
    if nn < 1e-9 {
        return e;
    }
    n /= nn;
    e * opening.cos() + n * opening.sin()
}

/// Derive an invariant splitting from an invariant cone family: E^s comes
/// from pulling the s-cone center backward from the right end of the window,
/// E^u from pushing the u-cone center forward from the left end; on a window
/// of length zero the free end is the cone center itself. Each iterated
/// subspace is certified to stay inside the cone at its index.
pub fn cones_to_splitting(seq: &GermSequence, cones: &ConeField) -> Result<Splitting> {
    let d = seq.dim();
    if cones.first > seq.first_index() || cones.last_index() < seq.last_index() + 1 {
        return Err(Error::Config("cone field does not cover the germ index range".into()));
    }
    let jac0: Vec<DMatrix<f64>> = (seq.first_index()..=seq.last_index())
        .map(|n| seq.germ(n).jacobian(&DVector::zeros(d)))
        .collect();

    let first = seq.first_index();
    let last_state = seq.last_index() + 1;
    let len = (last_state - first + 1) as usize;

    // forward chain for E^u
    let mut u_bases = Vec::with_capacity(len);
    let mut w = linalg::orthonormalize(&cones.u_centers[cones.idx(first)]);
    u_bases.push(w.clone());
    for n in first..last_state {
        let j = &jac0[(n - first) as usize];
        w = linalg::orthonormalize(&(j * &w));
        let i = cones.idx(n + 1);
        let ang = max_subspace_cone_angle(&w, &cones.u_centers[i]);
        if ang > cones.u_angles[i] {
            return Err(Error::ConeEscape { at: n + 1, angle: ang, opening: cones.u_angles[i] });
        }
        u_bases.push(w.clone());
    }

    // backward chain for E^s
    let mut s_bases = vec![DMatrix::zeros(d, cones.s_centers[0].ncols()); len];
    let mut ws = linalg::orthonormalize(&cones.s_centers[cones.idx(last_state)]);
    s_bases[len - 1] = ws.clone();
    for n in (first..last_state).rev() {
        let j = &jac0[(n - first) as usize];
        let jinv = j.clone().try_inverse().ok_or_else(|| {
            Error::PreconditionViolated(format!("singular Jacobian at index {n}"))
        })?;
        ws = linalg::orthonormalize(&(&jinv * &ws));
        let i = cones.idx(n);
        if ws.ncols() > 0 {
            let ang = max_subspace_cone_angle(&ws, &cones.s_centers[i]);
            if ang > cones.s_angles[i] {
                return Err(Error::ConeEscape { at: n, angle: ang, opening: cones.s_angles[i] });
            }
        }
        s_bases[(n - first) as usize] = ws.clone();
    }

    Splitting::new(first, u_bases, s_bases)
}

fn max_subspace_cone_angle(w: &DMatrix<f64>, center: &DMatrix<f64>) -> f64 {
    if w.ncols() == 0 {
        return 0.0;
    }
    let cos = linalg::principal_cosines(&linalg::orthonormalize(center), w);
    cos.last().cloned().unwrap_or(1.0).acos()
}

/// The linear blocks and coordinate error maps of one germ with respect to
/// the splittings at n and n+1: f in coordinates reads
/// (v, w) -> (A v + g(v,w), B w + h(v,w)) with g, h vanishing to first order
/// at the origin.
pub struct NonlinearSplit<'a> {
    germ: &'a Germ,
    basis_in: DMatrix<f64>,
    combined_out: DMatrix<f64>,
    j0: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    k: usize,
}

impl<'a> NonlinearSplit<'a> {
    pub fn new(seq: &'a GermSequence, split: &Splitting, n: i64) -> Result<NonlinearSplit<'a>> {
        let germ = seq.germ(n);
        let k = split.u_dim();
        let basis_in = split.combined(n);
        let combined_out = split.combined(n + 1);
        let j0 = germ.jacobian(&DVector::zeros(seq.dim()));
        // coordinate Jacobian at the origin; off-diagonal blocks vanish up to
        // the invariance residual
        let coord = linalg::solve_matrix(&combined_out, &(&j0 * &basis_in))?;
        let a = coord.view((0, 0), (k, k)).into_owned();
        let sd = split.s_dim();
        let b = coord.view((k, k), (sd, sd)).into_owned();
        Ok(NonlinearSplit { germ, basis_in, combined_out, j0, a, b, k })
    }

    /// Coordinate error terms (g, h) at coordinates (v, w).
    pub fn error_parts(&self, v: &DVector<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut vw = DVector::zeros(self.k + w.len());
        vw.rows_mut(0, self.k).copy_from(v);
        vw.rows_mut(self.k, w.len()).copy_from(w);
        let x = &self.basis_in * &vw;
        let s = self.germ.eval(&x) - &self.j0 * &x;
        let coords = linalg::solve(&self.combined_out, &s).expect("output basis degenerate");
        (
            coords.rows(0, self.k).into_owned(),
            coords.rows(self.k, coords.len() - self.k).into_owned(),
        )
    }

    /// Full image of (v, w) in output coordinates.
    pub fn image(&self, v: &DVector<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (g, h) = self.error_parts(v, w);
        (&self.a * v + g, &self.b * w + h)
    }
}

/// Result of probing a Hölder seminorm from samples: a certified sampled
/// lower bound plus a Richardson-extrapolated heuristic value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderEstimate {
    pub lower_bound: f64,
    pub extrapolated: f64,
}

/// Lower estimate of sup |Df(x) - Df(y)| / |x - y|^alpha over the ball
/// B(0, r), from low-discrepancy point pairs plus near-diagonal probes.
/// Monotone nondecreasing in `samples`.
pub fn holder_estimate(germ: &Germ, alpha: f64, r: f64, samples: usize) -> HolderEstimate {
    let d = germ.dim();
    let samples = samples.max(2);
    let mut pts: Vec<DVector<f64>> = Vec::with_capacity(samples);
    let mut i = 0;
    while pts.len() < samples {
        let p = linalg::halton_in_cube(i, d, r);
        if p.norm() <= r {
            pts.push(p);
        }
        i += 1;
    }
    let jacs: Vec<DMatrix<f64>> = pts.iter().map(|p| germ.jacobian(p)).collect();

    let quot = |x: &DVector<f64>, jx: &DMatrix<f64>, y: &DVector<f64>| -> f64 {
        let dist = (x - y).norm();
        if dist < 1e-14 {
            return 0.0;
        }
        linalg::spectral_norm(&(jx - germ.jacobian(y))) / dist.powf(alpha)
    };

    let mut lower: f64 = 0.0;
    // far pairs between consecutive samples
    for (idx, w) in pts.windows(2).enumerate() {
        lower = lower.max(quot(&w[0], &jacs[idx], &w[1]));
    }

    let d1 = 1e-3 * r;
    let d2 = 5e-4 * r;
    let mut extrapolated = lower;
    for (idx, p) in pts.iter().enumerate() {
        let mut dirs: Vec<DVector<f64>> = (0..d)
            .map(|a| {
                let mut e = DVector::zeros(d);
                e[a] = 1.0;
                e
            })
            .collect();
        dirs.push(linalg::halton_unit(idx, d));
        for dir in dirs {
            // step inward when the probe would leave the ball
            let sign = if (p + &dir * d1).norm() <= r { 1.0 } else { -1.0 };
            let q1 = quot(p, &jacs[idx], &(p + &dir * (sign * d1)));
            let q2 = quot(p, &jacs[idx], &(p + &dir * (sign * d2)));
            lower = lower.max(q1).max(q2);
            extrapolated = extrapolated.max(2.0 * q2 - q1);
        }
    }
    HolderEstimate { lower_bound: lower, extrapolated: extrapolated.max(lower) }
}

/// Check the (C4)-style rate bounds of extracted linear data against L.
pub fn check_rate_bounds(lin: &[LinearData], rate_bound: f64) -> bool {
    lin.iter().all(|l| {
        l.lambda_u.abs() <= rate_bound && (l.lambda_s == f64::NEG_INFINITY || l.lambda_s.abs() <= rate_bound)
    }) && lin.windows(2).all(|w| w[1].beta <= (rate_bound.exp()) * w[0].beta * (1.0 + 1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag_seq(len: usize) -> (GermSequence, Splitting) {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let germs = vec![Germ::linear(a, 10.0); len];
        let seq = GermSequence::new(germs, 0, 1.0, 1.0).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let split = Splitting::constant(0, len + 1, u, s).unwrap();
        (seq, split)
    }

    pub(crate) fn quad_germ() -> Germ {
        let map: MapFn = Arc::new(|x: &DVector<f64>| {
            DVector::from_vec(vec![2.0 * x[0] + x[1] * x[1], 0.5 * x[1] + x[0] * x[0]])
        });
        let jac: JacFn = Arc::new(|x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[2.0, 2.0 * x[1], 2.0 * x[0], 0.5])
        });
        Germ::new(2, map, Some(jac), DomainBox::symmetric(2, 0.35)).unwrap()
    }

    #[test]
    fn compose_diagonal_example() {
        // three applications of (2x, y/2)
        let (seq, _) = diag_seq(4);
        let x = DVector::from_vec(vec![0.1, 0.4]);
        let y = compose(&seq, 0, 3, &x).unwrap();
        assert_relative_eq!(y[0], 0.8, epsilon = 1e-14);
        assert_relative_eq!(y[1], 0.05, epsilon = 1e-14);
    }

    #[test]
    fn compose_empty_is_identity() {
        let (seq, _) = diag_seq(2);
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let y = compose(&seq, 0, 0, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn compose_reports_domain_exit() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let germs = vec![Germ::linear(a, 1.0); 5];
        let seq = GermSequence::new(germs, 0, 1.0, 1.0).unwrap();
        let x = DVector::from_vec(vec![0.3, 0.0]);
        // 0.3 -> 0.6 -> 1.2 leaves the box before germ 2 applies
        match compose(&seq, 0, 5, &x) {
            Err(Error::DomainExit { at }) => assert_eq!(at, 2),
            other => panic!("expected DomainExit, got {other:?}"),
        }
    }

    #[test]
    fn extract_diagonal_linear_data() {
        let (seq, split) = diag_seq(3);
        let lin = extract_linear_data(&seq, &split, &ExtractOptions::default()).unwrap();
        for l in &lin {
            assert_relative_eq!(l.lambda_u, 2.0_f64.ln(), epsilon = 1e-12);
            assert_relative_eq!(l.lambda_s, -(2.0_f64.ln()), epsilon = 1e-12);
            assert_relative_eq!(l.theta, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
            assert_relative_eq!(l.beta, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn extract_shear_with_eigen_splitting() {
        // [[2,1],[0,1/2]]: contracting eigendirection is (-2, 3)/sqrt(13)
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let germs = vec![Germ::linear(a, 10.0); 2];
        let seq = GermSequence::new(germs, 0, 1.0, 1.0).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let es = DMatrix::from_column_slice(2, 1, &[-2.0 / 13.0_f64.sqrt(), 3.0 / 13.0_f64.sqrt()]);
        let split = Splitting::constant(0, 3, u, es.clone()).unwrap();
        let lin = extract_linear_data(&seq, &split, &ExtractOptions::default()).unwrap();
        assert_relative_eq!(lin[0].lambda_u, 2.0_f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(lin[0].lambda_s, -(2.0_f64.ln()), epsilon = 1e-12);
        let expected_theta = (2.0 / 13.0_f64.sqrt()).acos();
        assert_relative_eq!(lin[0].theta, expected_theta, epsilon = 1e-12);
    }

    #[test]
    fn extract_with_trivial_stable_bundle() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.5]);
        let germs = vec![Germ::linear(a, 10.0); 2];
        let seq = GermSequence::new(germs, 0, 1.0, 2.0).unwrap();
        let u = DMatrix::identity(2, 2);
        let s = DMatrix::zeros(2, 0);
        let split = Splitting::constant(0, 3, u, s).unwrap();
        let lin = extract_linear_data(&seq, &split, &ExtractOptions::default()).unwrap();
        assert_relative_eq!(lin[0].lambda_u, 0.5_f64.ln(), epsilon = 1e-12);
        assert_eq!(lin[0].lambda_s, f64::NEG_INFINITY);
        assert_relative_eq!(lin[0].theta, std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn germ_translates_small_fixed_point_shift() {
        // f(x) = 2(x - p) + p fixes p, not 0, with |p| < 1e-6
        let p = 4e-7;
        let map: MapFn = Arc::new(move |x: &DVector<f64>| {
            DVector::from_vec(vec![2.0 * (x[0] - p) + p])
        });
        let g = Germ::new(1, map, None, DomainBox::symmetric(1, 1.0)).unwrap();
        assert!(g.eval(&DVector::zeros(1)).norm() <= 1e-10);
        // and a germ with a distant fixed point is rejected
        let map: MapFn = Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![2.0 * x[0] - 0.1]));
        assert!(Germ::new(1, map, None, DomainBox::symmetric(1, 1.0)).is_err());
    }

    #[test]
    fn nonlinear_split_of_quadratic_map() {
        let germs = vec![quad_germ(); 1];
        let seq = GermSequence::new(germs, 0, 1.0, 1.0).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let split = Splitting::constant(0, 2, u, s).unwrap();
        let ns = NonlinearSplit::new(&seq, &split, 0).unwrap();
        assert_relative_eq!(ns.a[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(ns.b[(0, 0)], 0.5, epsilon = 1e-12);
        let v = DVector::from_vec(vec![0.2]);
        let w = DVector::from_vec(vec![-0.1]);
        let (g, h) = ns.error_parts(&v, &w);
        assert_relative_eq!(g[0], 0.01, epsilon = 1e-13); // w^2
        assert_relative_eq!(h[0], 0.04, epsilon = 1e-13); // v^2
        // zero at the origin
        let (g0, h0) = ns.error_parts(&DVector::zeros(1), &DVector::zeros(1));
        assert!(g0.norm() < 1e-14 && h0.norm() < 1e-14);
    }

    #[test]
    fn nonlinear_split_of_shear_product_map() {
        // f(x,y) = (2x, y/2 + xy): g = 0, h = v w
        let map: MapFn = Arc::new(|x: &DVector<f64>| {
            DVector::from_vec(vec![2.0 * x[0], 0.5 * x[1] + x[0] * x[1]])
        });
        let g = Germ::new(2, map, None, DomainBox::symmetric(2, 0.4)).unwrap();
        let seq = GermSequence::new(vec![g], 0, 1.0, 1.0).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let split = Splitting::constant(0, 2, u, s).unwrap();
        let ns = NonlinearSplit::new(&seq, &split, 0).unwrap();
        let v = DVector::from_vec(vec![0.2]);
        let w = DVector::from_vec(vec![0.3]);
        let (gv, hv) = ns.error_parts(&v, &w);
        assert!(gv[0].abs() < 1e-9);
        assert_relative_eq!(hv[0], 0.06, epsilon = 1e-9);
    }

    #[test]
    fn linear_germ_has_zero_holder_seminorm() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let g = Germ::linear(a, 1.0);
        let h = holder_estimate(&g, 1.0, 1.0, 16);
        assert_eq!(h.lower_bound, 0.0);
        assert_eq!(h.extrapolated, 0.0);
    }

    #[test]
    fn holder_estimate_of_quadratic_map() {
        // spectral-norm oracle over a dense grid gives exactly 2 for this map
        let g = quad_germ();
        let h = holder_estimate(&g, 1.0, 0.3, 32);
        assert!(h.lower_bound <= 2.0 + 1e-9, "lower bound {}", h.lower_bound);
        assert!(h.lower_bound > 1.9, "lower bound {}", h.lower_bound);
        assert!((h.extrapolated - 2.0).abs() < 0.05, "extrapolated {}", h.extrapolated);
    }

    #[test]
    fn holder_estimate_is_monotone_in_samples() {
        let g = quad_germ();
        let mut last = 0.0;
        for s in [4, 8, 16, 32] {
            let h = holder_estimate(&g, 1.0, 0.3, s);
            assert!(h.lower_bound >= last);
            last = h.lower_bound;
        }
    }

    #[test]
    fn cones_give_coordinate_splitting_for_diagonal_map() {
        let (seq, _) = diag_seq(3);
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let cones = ConeField {
            first: 0,
            u_centers: vec![u.clone(); 4],
            u_angles: vec![0.3; 4],
            s_centers: vec![s.clone(); 4],
            s_angles: vec![0.3; 4],
        };
        verify_cone_invariance(&seq, &cones, 8).unwrap();
        let split = cones_to_splitting(&seq, &cones).unwrap();
        for n in 0..=3 {
            assert!(linalg::subspace_distance(split.u_basis(n), &u) < 1e-12);
            assert!(linalg::subspace_distance(split.s_basis(n), &s) < 1e-12);
        }
    }

    #[test]
    fn cones_converge_to_contracting_eigendirection() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let germs = vec![Germ::linear(a.clone(), 10.0); 20];
        let seq = GermSequence::new(germs, 0, 1.0, 1.0).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let cones = ConeField {
            first: 0,
            u_centers: vec![u.clone(); 21],
            u_angles: vec![0.5; 21],
            s_centers: vec![s.clone(); 21],
            s_angles: vec![0.9; 21],
        };
        let split = cones_to_splitting(&seq, &cones).unwrap();
        // power-iteration oracle on Df(0)^{-1}
        let ainv = a.try_inverse().unwrap();
        let mut w = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        for _ in 0..20 {
            w = linalg::orthonormalize(&(&ainv * &w));
        }
        assert!(linalg::subspace_distance(split.u_basis(0), &u) < 1e-12);
        assert!(linalg::subspace_distance(split.s_basis(0), &w) < 1e-12);
        let eig = DMatrix::from_column_slice(2, 1, &[-2.0 / 13.0_f64.sqrt(), 3.0 / 13.0_f64.sqrt()]);
        assert!(linalg::subspace_distance(split.s_basis(0), &eig) < 1e-8);
    }

    #[test]
    fn degenerate_window_returns_cone_centers() {
        let (seq, _) = diag_seq(1);
        let seq = GermSequence::new(vec![seq.germ(0).clone()], 0, 1.0, 1.0).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.1]);
        let s = DMatrix::from_column_slice(2, 1, &[0.1, 1.0]);
        let cones = ConeField {
            first: 0,
            u_centers: vec![u.clone(); 2],
            u_angles: vec![0.8; 2],
            s_centers: vec![s.clone(); 2],
            s_angles: vec![0.8; 2],
        };
        let split = cones_to_splitting(&seq, &cones).unwrap();
        // the free ends in a one-step window are the centers themselves
        assert!(linalg::subspace_distance(split.u_basis(0), &linalg::orthonormalize(&u)) < 1e-12);
        assert!(linalg::subspace_distance(split.s_basis(1), &linalg::orthonormalize(&s)) < 1e-12);
    }

    #[test]
    fn inverse_germ_round_trips() {
        let g = quad_germ();
        let ginv = g.inverse(0.8);
        let x = DVector::from_vec(vec![0.05, -0.03]);
        let y = g.eval(&x);
        let back = ginv.eval(&y);
        assert!((back - &x).norm() < 1e-11);
    }
}
