//! The graph transform: pushing admissible manifolds through germs by
//! implicit damped-Newton solves at target nodes, iterated pushforwards,
//! expansion/attraction checks, the backward fixed-point solver for local
//! unstable manifolds, and the dynamical membership test.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admissible::{class_check, default_degree, AdmissibleManifold, ClassParams, CLASS_SLACK};
use crate::cheb::ChebGrid;
use crate::diagnostics::effective_series;
use crate::error::{Error, Result};
use crate::germ::{compose_orbit, DomainBox, GermSequence, LinearData, Splitting};
use crate::linalg;
use crate::rates::{
    build_params, derived_rates, step_conditions, ParamSeq, RateWindow, Seeds,
};

/// Options shared by single steps and pushforwards.
#[derive(Debug, Clone)]
pub struct TransformOptions {
    /// Target grid degree; defaults per expanding dimension.
    pub degree: Option<usize>,
    /// Relative Newton tolerance on the implicit node solves.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Fail (instead of warn) when the output leaves its class.
    pub strict_class: bool,
    /// Evaluate the one-step admissibility conditions before transforming.
    pub verify_conditions: bool,
    /// Override for the nonlinearity-modulus coefficient (zeros for exactly
    /// linear germs); defaults to beta_n.
    pub zhat_coeff: Option<Vec<f64>>,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions {
            degree: None,
            newton_tol: 1e-12,
            newton_max_iters: 50,
            strict_class: false,
            verify_conditions: true,
            zhat_coeff: None,
        }
    }
}

/// Window context: germs, splitting, linear data and class parameters over
/// one contiguous index range. `lin[i]` and `params` positions align with
/// germ index `seq.first_index() + i`.
pub struct TransformCtx<'a> {
    pub seq: &'a GermSequence,
    pub split: &'a Splitting,
    pub lin: &'a [LinearData],
    pub params: &'a ParamSeq,
    pub opts: TransformOptions,
}

impl<'a> TransformCtx<'a> {
    pub fn new(
        seq: &'a GermSequence,
        split: &'a Splitting,
        lin: &'a [LinearData],
        params: &'a ParamSeq,
        opts: TransformOptions,
    ) -> Result<Self> {
        if lin.len() != seq.len() || params.steps() < seq.len() {
            return Err(Error::Config(
                "linear data / parameters do not cover the germ window".into(),
            ));
        }
        Ok(TransformCtx { seq, split, lin, params, opts })
    }

    fn pos(&self, n: i64) -> usize {
        (n - self.seq.first_index()) as usize
    }

    pub fn class_at(&self, n: i64) -> ClassParams {
        let i = self.pos(n);
        ClassParams {
            r: self.params.r[i],
            tau: self.params.tau[i],
            sigma: self.params.sigma[i],
            kappa: self.params.kappa[i],
            gamma: self.params.gamma[i],
            alpha: self.params.alpha,
        }
    }
}

/// Per-step outcome of the graph transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformStepReport {
    pub n: i64,
    pub input_params: ClassParams,
    pub output_params: ClassParams,
    pub newton_iters: usize,
    pub residual: f64,
    pub expansion_min: f64,
    pub domain_coverage: f64,
    pub input_class_ok: bool,
    pub class_ok: bool,
}

struct GraphPushStats {
    newton_iters: usize,
    residual: f64,
    coverage: f64,
    expansion_min: f64,
}

/// Push the graph of `input` (over `cin` coordinates) through an ambient map
/// onto the `target` grid (over `cout` coordinates). Solves the implicit
/// node equation by damped Newton seeded with the linearization at 0.
#[allow(clippy::too_many_arguments)]
fn push_graph(
    map: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    jac: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    domain: Option<&DomainBox>,
    cin: &DMatrix<f64>,
    cout: &DMatrix<f64>,
    input: &AdmissibleManifold,
    target: &ChebGrid,
    out_params: ClassParams,
    newton_tol: f64,
    newton_max_iters: usize,
) -> Result<(AdmissibleManifold, GraphPushStats)> {
    let k = input.u_dim();
    let s_dim = input.s_dim();
    let d = k + s_dim;
    let cout_lu = cout.clone().lu();
    let u_in = cin.view((0, 0), (d, k)).into_owned();
    let s_in = cin.view((0, k), (d, s_dim)).into_owned();

    // linearization at the origin for seeding
    let origin = DVector::zeros(d);
    let j0 = jac(&origin);
    let j0c = cout_lu.solve(&(&j0 * cin)).ok_or_else(|| {
        Error::PreconditionViolated("degenerate output basis".into())
    })?;
    let a0 = j0c.view((0, 0), (k, k)).into_owned();
    let a0_lu = a0.lu();

    let ambient = |v: &DVector<f64>| -> DVector<f64> {
        let w = input.evaluate_unchecked(v);
        &u_in * v + &s_in * &w
    };

    let n_nodes = target.node_count();
    let mut values = Vec::with_capacity(n_nodes);
    let mut derivs = Vec::with_capacity(n_nodes);
    let mut max_iters = 0usize;
    let mut max_residual: f64 = 0.0;
    let mut ball_nodes = 0usize;
    let mut covered = 0usize;
    let mut preimages: Vec<DVector<f64>> = Vec::with_capacity(n_nodes);
    let mut images: Vec<DVector<f64>> = Vec::with_capacity(n_nodes);

    for node in 0..n_nodes {
        let vbar = target.point(node);
        let tol = newton_tol * vbar.norm().max(target.radius());
        let mut v = a0_lu.solve(&vbar).ok_or_else(|| {
            Error::PreconditionViolated("expanding block is singular".into())
        })?;
        let mut best_res = f64::INFINITY;
        let mut iters = 0usize;
        let residual_of = |v: &DVector<f64>| -> (DVector<f64>, DVector<f64>, f64) {
            let x = ambient(v);
            let y = map(&x);
            let yc = cout_lu.solve(&y).expect("output basis degenerate");
            let res = yc.rows(0, k).into_owned() - &vbar;
            let norm = res.norm();
            (x, res, norm)
        };
        let (mut x, mut res, mut res_norm) = residual_of(&v);
        while res_norm > tol && iters < newton_max_iters {
            let dpsi = input.derivative_unchecked(&v);
            let tangent = &u_in + &s_in * &dpsi; // d x / d v
            let jx = jac(&x);
            let full = cout_lu
                .solve(&(&jx * &tangent))
                .ok_or(Error::NewtonFail { node, residual: res_norm })?;
            let juu = full.view((0, 0), (k, k)).into_owned();
            let step = juu
                .lu()
                .solve(&res)
                .ok_or(Error::NewtonFail { node, residual: res_norm })?;
            let mut damp = 1.0;
            loop {
                let cand = &v - &step * damp;
                let (cx, cres, cnorm) = residual_of(&cand);
                if cnorm < res_norm || damp < 1.0 / 1024.0 {
                    v = cand;
                    x = cx;
                    res = cres;
                    res_norm = cnorm;
                    break;
                }
                damp *= 0.5;
            }
            let _ = &res;
            iters += 1;
            best_res = best_res.min(res_norm);
        }
        if res_norm > tol {
            return Err(Error::NewtonFail { node, residual: res_norm });
        }
        max_iters = max_iters.max(iters);
        max_residual = max_residual.max(res_norm);

        let in_ball = vbar.norm() <= target.radius() * (1.0 + 1e-12);
        if in_ball {
            ball_nodes += 1;
            let preimage_ok = v.norm() <= input.radius() * (1.0 + 1e-9);
            let domain_ok = domain.map(|b| b.contains(&x)).unwrap_or(true);
            if preimage_ok && domain_ok {
                covered += 1;
            }
        }

        // node value and derivative from the full coordinate Jacobian
        let y = map(&x);
        let yc = cout_lu.solve(&y).expect("output basis degenerate");
        let value = yc.rows(k, s_dim).into_owned();
        let dpsi = input.derivative_unchecked(&v);
        let tangent = &u_in + &s_in * &dpsi;
        let jx = jac(&x);
        let full = cout_lu
            .solve(&(&jx * &tangent))
            .ok_or(Error::NewtonFail { node, residual: res_norm })?;
        let juu = full.view((0, 0), (k, k)).into_owned();
        let jsu = full.view((k, 0), (s_dim, k)).into_owned();
        let deriv = &jsu
            * juu
                .try_inverse()
                .ok_or(Error::NewtonFail { node, residual: res_norm })?;
        values.push(value);
        derivs.push(deriv);
        preimages.push(ambient(&v));
        images.push(y);
    }

    // observed expansion between consecutive node preimages on the graph
    let mut expansion_min = f64::INFINITY;
    for i in 1..preimages.len() {
        let base = (&preimages[i] - &preimages[i - 1]).norm();
        if base < 1e-10 {
            continue;
        }
        expansion_min = expansion_min.min((&images[i] - &images[i - 1]).norm() / base);
    }

    let out = AdmissibleManifold::from_parts(target.clone(), s_dim, values, derivs, out_params)?;
    let coverage = if ball_nodes == 0 { 1.0 } else { covered as f64 / ball_nodes as f64 };
    Ok((out, GraphPushStats { newton_iters: max_iters, residual: max_residual, coverage, expansion_min }))
}

/// One graph-transform step: the image of `m` under germ n, represented over
/// the ball of the next radius.
pub fn transform_step(
    ctx: &TransformCtx,
    n: i64,
    m: &AdmissibleManifold,
) -> Result<(AdmissibleManifold, TransformStepReport)> {
    let i = ctx.pos(n);
    let input_params = ctx.class_at(n);
    let output_params = ctx.class_at(n + 1);

    if ctx.opts.verify_conditions {
        let slice_params = ParamSeq {
            r: ctx.params.r[i..=i + 1].to_vec(),
            tau: ctx.params.tau[i..=i + 1].to_vec(),
            sigma: ctx.params.sigma[i..=i + 1].to_vec(),
            kappa: ctx.params.kappa[i..=i + 1].to_vec(),
            gamma: ctx.params.gamma[i..=i + 1].to_vec(),
            alpha: ctx.params.alpha,
            delta: ctx.params.delta,
            xi: ctx.params.xi,
            gamma_bar: ctx.params.gamma_bar,
            c: None,
            validity: None,
        };
        let lin_slice = &ctx.lin[i..=i];
        let zhat = ctx.opts.zhat_coeff.as_ref().map(|z| vec![z[i]]);
        let theta_final = ctx.lin.get(i + 1).map(|l| l.theta);
        let rates = derived_rates(lin_slice, &slice_params, zhat.as_deref(), theta_final)?;
        let conds = step_conditions(lin_slice, &slice_params, &rates);
        if !conds.step_ok(0) {
            return Err(Error::PreconditionViolated(format!(
                "one-step admissibility conditions fail at index {n}: {conds:?}"
            )));
        }
    }

    let input_class_ok = class_check(m, &input_params, CLASS_SLACK).member;
    let germ = ctx.seq.germ(n);
    let cin = ctx.split.combined(n);
    let cout = ctx.split.combined(n + 1);
    let degree = ctx.opts.degree.unwrap_or_else(|| default_degree(m.u_dim()));
    let target = ChebGrid::new(m.u_dim(), degree, output_params.r);
    let map = |x: &DVector<f64>| germ.eval(x);
    let jac = |x: &DVector<f64>| germ.jacobian(x);
    let (out, stats) = push_graph(
        &map,
        &jac,
        Some(germ.domain()),
        &cin,
        &cout,
        m,
        &target,
        output_params,
        ctx.opts.newton_tol,
        ctx.opts.newton_max_iters,
    )?;
    let class_ok = class_check(&out, &output_params, CLASS_SLACK).member;
    if ctx.opts.strict_class && !class_ok {
        return Err(Error::ClassEscape {
            at: n + 1,
            detail: format!("{:?}", class_check(&out, &output_params, CLASS_SLACK)),
        });
    }
    Ok((
        out,
        TransformStepReport {
            n,
            input_params,
            output_params,
            newton_iters: stats.newton_iters,
            residual: stats.residual,
            expansion_min: stats.expansion_min,
            domain_coverage: stats.coverage,
            input_class_ok,
            class_ok,
        },
    ))
}

/// Iterated pushforward from germ index `from` to `to`; returns all
/// intermediate manifolds (the input first) and per-step reports.
pub fn push(
    ctx: &TransformCtx,
    m0: AdmissibleManifold,
    from: i64,
    to: i64,
) -> Result<(Vec<AdmissibleManifold>, Vec<TransformStepReport>)> {
    let mut manifolds = vec![m0];
    let mut reports = Vec::new();
    for n in from..to {
        let (next, rep) = transform_step(ctx, n, manifolds.last().unwrap())?;
        manifolds.push(next);
        reports.push(rep);
    }
    Ok((manifolds, reports))
}

/// Max deviation of forward-iterated probe points of graph psi_n from graph
/// psi_{n+1}, over the whole pushed family.
pub fn graph_invariance_error(
    ctx: &TransformCtx,
    manifolds: &[AdmissibleManifold],
    from: i64,
    probes: usize,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, pair) in manifolds.windows(2).enumerate() {
        let n = from + i as i64;
        let (cur, next) = (&pair[0], &pair[1]);
        let germ = ctx.seq.germ(n);
        for p in 0..probes {
            let v = linalg::halton_in_cube(p, cur.u_dim(), cur.radius());
            if v.norm() > cur.radius() {
                continue;
            }
            let x = ctx.split.ambient(n, &v, &cur.evaluate_unchecked(&v));
            if !germ.domain().contains(&x) {
                continue;
            }
            let y = germ.eval(&x);
            let (vbar, wbar) = ctx.split.coords(n + 1, &y);
            if vbar.norm() > next.radius() {
                continue;
            }
            worst = worst.max((wbar - next.evaluate_unchecked(&vbar)).norm());
        }
    }
    Ok(worst)
}

/// Result of an expansion check over sampled pairs on a pushed graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionCheck {
    pub min_factor: f64,
    pub pairs_used: usize,
    pub bound: f64,
    pub ok: bool,
}

/// Sample point pairs on graph psi_m, push them with the maps, and compare
/// the observed expansion with `bound`. Pairs closer than 1e-10 are skipped.
#[allow(clippy::too_many_arguments)]
pub fn check_expansion(
    seq: &GermSequence,
    split: &Splitting,
    manifolds: &[AdmissibleManifold],
    first: i64,
    m_idx: i64,
    n_idx: i64,
    pairs: usize,
    seed: u64,
    bound: f64,
) -> Result<ExpansionCheck> {
    let m = &manifolds[(m_idx - first) as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = m.u_dim();
    let mut used = 0usize;
    let mut min_factor = f64::INFINITY;
    let mut attempts = 0usize;
    while used < pairs && attempts < pairs * 20 {
        attempts += 1;
        let draw = |rng: &mut ChaCha8Rng| {
            DVector::from_iterator(k, (0..k).map(|_| rng.gen_range(-1.0..1.0) * m.radius()))
        };
        let v1 = draw(&mut rng);
        let v2 = draw(&mut rng);
        if v1.norm() > m.radius() || v2.norm() > m.radius() {
            continue;
        }
        let x = split.ambient(m_idx, &v1, &m.evaluate_unchecked(&v1));
        let y = split.ambient(m_idx, &v2, &m.evaluate_unchecked(&v2));
        let base = (&x - &y).norm();
        if base < 1e-10 {
            continue;
        }
        let fx = match compose_orbit(seq, m_idx, n_idx, &x) {
            Ok(o) => o.last().unwrap().clone(),
            Err(Error::DomainExit { .. }) => continue,
            Err(e) => return Err(e),
        };
        let fy = match compose_orbit(seq, m_idx, n_idx, &y) {
            Ok(o) => o.last().unwrap().clone(),
            Err(Error::DomainExit { .. }) => continue,
            Err(e) => return Err(e),
        };
        min_factor = min_factor.min((fx - fy).norm() / base);
        used += 1;
    }
    Ok(ExpansionCheck {
        min_factor,
        pairs_used: used,
        bound,
        ok: min_factor >= bound * (1.0 - 1e-12),
    })
}

/// Per-step vertical contraction of an orbit toward the pushed graphs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractionCheck {
    pub ratios: Vec<f64>,
    pub bounds: Vec<f64>,
    pub distances: Vec<f64>,
    pub ok: bool,
}

/// Track the vertical distance of the orbit of x0 to the graphs and compare
/// each per-step contraction ratio with the derived stable rate (whose
/// nonlinearity reach is inflated to cover the orbit's offset).
pub fn check_attraction(
    ctx: &TransformCtx,
    manifolds: &[AdmissibleManifold],
    first: i64,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<AttractionCheck> {
    let orbit = compose_orbit(ctx.seq, first, first + steps as i64, x0)?;
    let mut distances = Vec::with_capacity(orbit.len());
    for (i, x) in orbit.iter().enumerate() {
        let n = first + i as i64;
        let (v, w) = ctx.split.coords(n, x);
        let m = &manifolds[i];
        if v.norm() > m.radius() * (1.0 + 1e-12) {
            break;
        }
        distances.push((w - m.evaluate_unchecked(&v)).norm());
    }
    if distances.len() < 2 {
        return Err(Error::PreconditionViolated(
            "orbit leaves the graph domain immediately".into(),
        ));
    }
    let mut ratios = Vec::with_capacity(distances.len() - 1);
    let mut bounds = Vec::with_capacity(distances.len() - 1);
    for i in 0..distances.len() - 1 {
        ratios.push(distances[i + 1] / distances[i]);
        let pos = (first + i as i64 - ctx.seq.first_index()) as usize;
        let mut inflated = ParamSeq {
            r: ctx.params.r[pos..=pos + 1].to_vec(),
            tau: ctx.params.tau[pos..=pos + 1].to_vec(),
            sigma: ctx.params.sigma[pos..=pos + 1].to_vec(),
            kappa: ctx.params.kappa[pos..=pos + 1].to_vec(),
            gamma: ctx.params.gamma[pos..=pos + 1].to_vec(),
            alpha: ctx.params.alpha,
            delta: ctx.params.delta,
            xi: ctx.params.xi,
            gamma_bar: ctx.params.gamma_bar,
            c: None,
            validity: None,
        };
        inflated.tau[0] = inflated.tau[0].max(distances[i]);
        let zhat = ctx.opts.zhat_coeff.as_ref().map(|z| vec![z[pos]]);
        let theta_final = ctx.lin.get(pos + 1).map(|l| l.theta);
        let rates =
            derived_rates(&ctx.lin[pos..=pos], &inflated, zhat.as_deref(), theta_final)?;
        bounds.push(rates.lambda_check_s[0].exp());
    }
    let ok = ratios
        .iter()
        .zip(&bounds)
        .all(|(r, b)| *r <= b * (1.0 + 1e-12));
    Ok(AttractionCheck { ratios, bounds, distances, ok })
}

/// Parameter source for the backward fixed-point solver.
#[derive(Debug, Clone)]
pub enum UnstableParams {
    /// Constant class through the origin, validated against the one-step
    /// conditions on every window.
    Uniform { r: f64, kappa: f64, gamma: f64 },
    /// Window parameters rebuilt from the effective rates each extension.
    Adaptive { rates: RateWindow, seeds: Seeds, beta_bar: f64 },
}

#[derive(Debug, Clone)]
pub struct UnstableOptions {
    pub params: UnstableParams,
    pub tol: f64,
    pub window_start: usize,
    pub window_cap: usize,
    pub transform: TransformOptions,
}

impl UnstableOptions {
    pub fn uniform(r: f64, kappa: f64, gamma: f64) -> Self {
        UnstableOptions {
            params: UnstableParams::Uniform { r, kappa, gamma },
            tol: 1e-9,
            window_start: 4,
            window_cap: 1024,
            transform: TransformOptions::default(),
        }
    }
}

/// Convergence report of the backward fixed-point construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnstableSolveReport {
    pub converged: bool,
    /// Number of window extensions performed.
    pub iterations: usize,
    /// Final backward window length.
    pub window: usize,
    /// Max graph-invariance residual over the final family.
    pub c0_residual: f64,
    /// C0 gaps between successive window approximants at index 0.
    pub history: Vec<f64>,
    /// Cauchy proxy 2 gamma exp(sum(lambda_check_s - lambda_hat_u)) of the
    /// final window.
    pub proxy_gap: f64,
}

fn window_params(
    lin: &[LinearData],
    alpha: f64,
    rate_bound: f64,
    opts: &UnstableOptions,
) -> Result<ParamSeq> {
    match &opts.params {
        UnstableParams::Uniform { r, kappa, gamma } => {
            Ok(ParamSeq::uniform(lin.len(), *r, *kappa, *gamma, alpha, 0.0))
        }
        UnstableParams::Adaptive { rates, seeds, beta_bar } => {
            let series = effective_series(lin, alpha, *beta_bar, rate_bound)?;
            let (params, _) = build_params(lin, &series, rates, seeds, rate_bound)?;
            Ok(params)
        }
    }
}

/// Solve for the local unstable family over indices [-window, 0] by pushing
/// the zero graph forward from ever deeper starting times until successive
/// approximants at index 0 are Cauchy within tolerance.
pub fn solve_unstable_family(
    seq: &GermSequence,
    split: &Splitting,
    lin: &[LinearData],
    opts: &UnstableOptions,
) -> Result<(Vec<AdmissibleManifold>, UnstableSolveReport, i64)> {
    if seq.last_index() != -1 {
        return Err(Error::Config(
            "unstable solver expects germs indexed ..., -2, -1 (states up to 0)".into(),
        ));
    }
    let total = seq.len();
    let alpha = seq.alpha();
    let mut window = opts.window_start.min(total);
    let mut prev: Option<AdmissibleManifold> = None;
    let mut history = Vec::new();
    let mut iterations = 0usize;

    loop {
        let from = -(window as i64);
        let offset = (from - seq.first_index()) as usize;
        let lin_slice = &lin[offset..];
        let params = window_params(lin_slice, alpha, seq.rate_bound(), opts)?;
        let sub_germs: Vec<_> = (from..=-1).map(|n| seq.germ(n).clone()).collect();
        let sub_seq = GermSequence::new(sub_germs, from, alpha, seq.rate_bound())?;
        let mut t_opts = opts.transform.clone();
        t_opts.zhat_coeff = opts
            .transform
            .zhat_coeff
            .as_ref()
            .map(|z| z[offset..].to_vec());
        let ctx = TransformCtx::new(&sub_seq, split, lin_slice, &params, t_opts)?;
        let k = ctx.split.u_dim();
        let degree = ctx.opts.degree.unwrap_or_else(|| default_degree(k));
        let seed = AdmissibleManifold::zero(k, split.s_dim(), degree, ctx.class_at(from));
        let (family, _reports) = push(&ctx, seed, from, 0)?;
        iterations += 1;
        let current = family.last().unwrap().clone();
        if let Some(p) = &prev {
            history.push(crate::admissible::c0_distance(p, &current));
        }
        let rates_slice =
            derived_rates(lin_slice, &params, ctx.opts.zhat_coeff.as_deref(), None)?;
        let sum_gap: f64 = rates_slice
            .lambda_check_s
            .iter()
            .zip(&rates_slice.lambda_hat_u)
            .map(|(s, u)| s - u)
            .sum();
        let proxy_gap = 2.0 * params.gamma[0] * sum_gap.exp();
        let converged = matches!(history.last(), Some(&g) if g < opts.tol);
        prev = Some(current);
        if converged || window >= total.min(opts.window_cap) {
            let c0_residual = graph_invariance_error(&ctx, &family, from, 64)?;
            let report = UnstableSolveReport {
                converged,
                iterations,
                window,
                c0_residual,
                history,
                proxy_gap,
            };
            if !converged {
                return Err(Error::NoConvergence {
                    k_max: window,
                    gap: report.history.last().cloned().unwrap_or(f64::NAN),
                });
            }
            return Ok((family, report, from));
        }
        window = (window * 2).min(total.min(opts.window_cap));
    }
}

/// Verdict of the dynamical membership characterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Membership {
    Member,
    NonMember,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub verdict: Membership,
    pub backward_ok: bool,
    pub vertical_distance: Option<f64>,
    pub backward_norms: Vec<f64>,
}

/// Test whether x lies on the unstable graph at index 0 in two independent
/// ways: backward iterates must contract at rate chi_bar_u with constant C,
/// and the vertical distance to the graph must vanish. Clear agreement gives
/// a verdict; disagreement is reported as inconclusive.
pub fn check_characterization(
    seq: &GermSequence,
    split: &Splitting,
    manifold: &AdmissibleManifold,
    x: &DVector<f64>,
    c: f64,
    chi_bar_u: f64,
    window: usize,
    vertical_tol: f64,
) -> Result<CharacterizationReport> {
    let mut backward_ok = true;
    let mut norms = Vec::with_capacity(window);
    let mut cur = x.clone();
    for m in 1..=window as i64 {
        if -m < seq.first_index() {
            break;
        }
        match seq.germ(-m).invert_point(&cur, 1e-13) {
            Ok(prev) => {
                cur = prev;
                norms.push(cur.norm());
                if cur.norm() > c * (-(m as f64) * chi_bar_u).exp() * (1.0 + 1e-9) {
                    backward_ok = false;
                    break;
                }
                if !seq.germ(-m).domain().contains(&cur) {
                    backward_ok = false;
                    break;
                }
            }
            Err(_) => {
                backward_ok = false;
                break;
            }
        }
    }
    let (v, w) = split.coords(0, x);
    let vertical = if v.norm() <= manifold.radius() * (1.0 + 1e-12) {
        Some((w - manifold.evaluate_unchecked(&v)).norm())
    } else {
        None
    };
    let vertical_ok = vertical.map(|d| d <= vertical_tol);
    let verdict = match (backward_ok, vertical_ok) {
        (true, Some(true)) => Membership::Member,
        (false, Some(false)) => Membership::NonMember,
        (false, None) => Membership::NonMember,
        _ => Membership::Inconclusive,
    };
    Ok(CharacterizationReport {
        verdict,
        backward_ok,
        vertical_distance: vertical,
        backward_norms: norms,
    })
}

/// Push a graph through an affine ambient map y = R x + c (re-centering step
/// of the closing procedure). The coordinate frames may differ on the two
/// sides.
#[allow(clippy::too_many_arguments)]
pub fn push_graph_affine(
    r_mat: &DMatrix<f64>,
    shift: &DVector<f64>,
    cin: &DMatrix<f64>,
    cout: &DMatrix<f64>,
    input: &AdmissibleManifold,
    target_radius: f64,
    degree: usize,
    out_params: ClassParams,
) -> Result<AdmissibleManifold> {
    let map = |x: &DVector<f64>| r_mat * x + shift;
    let jac = |_: &DVector<f64>| r_mat.clone();
    let target = ChebGrid::new(input.u_dim(), degree, target_radius);
    let (out, _) = push_graph(
        &map,
        &jac,
        None,
        cin,
        cout,
        input,
        &target,
        out_params,
        1e-12,
        50,
    )?;
    Ok(out)
}
