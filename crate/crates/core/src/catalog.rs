//! Built-in test systems and the chart adapter that turns a map with a
//! trajectory (on R^d or the flat torus) into a germ sequence in local
//! frames.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::germ::{
    holder_estimate, DomainBox, Germ, GermSequence, JacFn, MapFn, Splitting,
};
use crate::linalg;

/// A germ sequence bundled with its natural splitting.
pub struct System {
    pub seq: GermSequence,
    pub split: Splitting,
}

/// The block exponent pattern: 4 on the first half of each dyadic block,
/// -3 on the second half (1-based indexing; index 1 is a 4).
pub fn block_exponent(n: usize) -> f64 {
    assert!(n >= 1);
    if n == 1 {
        return 4.0;
    }
    let k = usize::BITS - 1 - n.leading_zeros(); // 2^k <= n < 2^{k+1}
    let base = 1usize << k;
    if n < base + base / 2 {
        4.0
    } else {
        -3.0
    }
}

fn coordinate_splitting(len: usize, d: usize, k: usize) -> Splitting {
    let mut u = DMatrix::zeros(d, k);
    for j in 0..k {
        u[(j, j)] = 1.0;
    }
    let mut s = DMatrix::zeros(d, d - k);
    for j in 0..d - k {
        s[(k + j, j)] = 1.0;
    }
    Splitting::constant(0, len, u, s).expect("coordinate splitting")
}

fn diag_germ(mu: f64, lambda: f64, half_width: f64) -> Germ {
    Germ::linear(DMatrix::from_row_slice(2, 2, &[mu, 0.0, 0.0, lambda]), half_width)
}

/// The quadratic hyperbolic model (2x + y^2, y/2 + x^2) on a box where it
/// stays a diffeomorphism.
pub fn quad_hyperbolic_germ() -> Germ {
    let map: MapFn = Arc::new(|x: &DVector<f64>| {
        DVector::from_vec(vec![2.0 * x[0] + x[1] * x[1], 0.5 * x[1] + x[0] * x[0]])
    });
    let jac: JacFn = Arc::new(|x: &DVector<f64>| {
        DMatrix::from_row_slice(2, 2, &[2.0, 2.0 * x[1], 2.0 * x[0], 0.5])
    });
    Germ::new(2, map, Some(jac), DomainBox::symmetric(2, 0.35)).expect("fixes origin")
}

/// Hyperbolic toral automorphism used by the closing fixtures.
pub fn cat_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0])
}

/// Instantiate a named builtin over a window of `n` germs.
///
/// Names: `diag_linear` (params mu, lambda), `alt_3_half`, `pliss_blocks`,
/// `pliss_blocks_2d`, `quad_hyperbolic`, `uniform_setting` (params mu,
/// lambda, delta), `cat_germ` (constant germ at the fixed point 0).
pub fn builtin(name: &str, params: &[f64], n: usize) -> Result<System> {
    if n == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    match name {
        "diag_linear" => {
            let (mu, lambda) = match params {
                [m, l] => (*m, *l),
                [] => (2.0, 0.5),
                _ => return Err(Error::Config("diag_linear takes params [mu, lambda]".into())),
            };
            let germs = vec![diag_germ(mu, lambda, 10.0); n];
            let rate = mu.ln().abs().max(lambda.ln().abs()).max(0.1);
            let seq = GermSequence::new(germs, 0, 1.0, rate)?;
            Ok(System { seq, split: coordinate_splitting(n + 1, 2, 1) })
        }
        "alt_3_half" => {
            let even = diag_germ(3.0, 0.5, 10.0);
            let odd = diag_germ(0.5, 3.0, 10.0);
            let germs: Vec<Germ> =
                (0..n).map(|i| if i % 2 == 0 { even.clone() } else { odd.clone() }).collect();
            let seq = GermSequence::new(germs, 0, 1.0, 3.0_f64.ln())?;
            Ok(System { seq, split: coordinate_splitting(n + 1, 2, 1) })
        }
        "pliss_blocks" => {
            // two shared germ objects so per-germ probes are cached
            let grow = Germ::linear(DMatrix::from_row_slice(1, 1, &[4.0_f64.exp()]), 1e12);
            let shrink = Germ::linear(DMatrix::from_row_slice(1, 1, &[(-3.0_f64).exp()]), 1e12);
            let germs: Vec<Germ> = (0..n)
                .map(|i| if block_exponent(i + 1) > 0.0 { grow.clone() } else { shrink.clone() })
                .collect();
            let seq = GermSequence::new(germs, 0, 1.0, 4.0)?;
            let u = DMatrix::identity(1, 1);
            let s = DMatrix::zeros(1, 0);
            Ok(System { seq, split: Splitting::constant(0, n + 1, u, s)? })
        }
        "pliss_blocks_2d" => {
            let grow = Germ::linear(
                DMatrix::from_row_slice(2, 2, &[4.0_f64.exp(), 0.0, 0.0, 0.5]),
                1e12,
            );
            let shrink = Germ::linear(
                DMatrix::from_row_slice(2, 2, &[(-3.0_f64).exp(), 0.0, 0.0, 0.5]),
                1e12,
            );
            let germs: Vec<Germ> = (0..n)
                .map(|i| if block_exponent(i + 1) > 0.0 { grow.clone() } else { shrink.clone() })
                .collect();
            let seq = GermSequence::new(germs, 0, 1.0, 4.0)?;
            Ok(System { seq, split: coordinate_splitting(n + 1, 2, 1) })
        }
        "quad_hyperbolic" => {
            let germs = vec![quad_hyperbolic_germ(); n];
            let seq = GermSequence::new(germs, 0, 1.0, 1.0)?;
            Ok(System { seq, split: coordinate_splitting(n + 1, 2, 1) })
        }
        "uniform_setting" => {
            let (mu, lambda, delta) = match params {
                [m, l, d] => (*m, *l, *d),
                [] => (2.0, 0.5, 0.05),
                _ => {
                    return Err(Error::Config(
                        "uniform_setting takes params [mu, lambda, delta]".into(),
                    ))
                }
            };
            let map: MapFn = Arc::new(move |x: &DVector<f64>| {
                DVector::from_vec(vec![
                    mu * x[0] + 0.5 * delta * x[0].sin() * x[1].sin(),
                    lambda * x[1] + 0.5 * delta * (x[0].cos() - 1.0) * x[1].cos(),
                ])
            });
            let jac: JacFn = Arc::new(move |x: &DVector<f64>| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        mu + 0.5 * delta * x[0].cos() * x[1].sin(),
                        0.5 * delta * x[0].sin() * x[1].cos(),
                        -0.5 * delta * x[0].sin() * x[1].cos(),
                        lambda - 0.5 * delta * (x[0].cos() - 1.0) * x[1].sin(),
                    ],
                )
            });
            let g = Germ::new(2, map, Some(jac), DomainBox::symmetric(2, 1.0))?;
            let germs = vec![g; n];
            let rate = mu.ln().abs().max(lambda.ln().abs()) + delta;
            let seq = GermSequence::new(germs, 0, 1.0, rate)?;
            Ok(System { seq, split: coordinate_splitting(n + 1, 2, 1) })
        }
        "cat_germ" => {
            let a = cat_matrix();
            let germs = vec![Germ::linear(a.clone(), 0.4); n];
            let seq = GermSequence::new(germs, 0, 1.0, 1.0)?;
            let split = auto_eigen_splitting(&seq)?;
            Ok(System { seq, split })
        }
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

/// Splitting from the eigendecomposition of the first Jacobian at 0,
/// propagated forward under the derivative cocycle.
pub fn auto_eigen_splitting(seq: &GermSequence) -> Result<Splitting> {
    let d = seq.dim();
    let j0 = seq.germ(seq.first_index()).jacobian(&DVector::zeros(d));
    let (mut u, mut s) = linalg::eigen_split(&j0);
    if u.ncols() + s.ncols() != d {
        return Err(Error::PreconditionViolated(
            "eigendecomposition did not produce a full splitting".into(),
        ));
    }
    let mut us = Vec::with_capacity(seq.len() + 1);
    let mut ss = Vec::with_capacity(seq.len() + 1);
    us.push(u.clone());
    ss.push(s.clone());
    for n in seq.first_index()..=seq.last_index() {
        let j = seq.germ(n).jacobian(&DVector::zeros(d));
        u = linalg::orthonormalize(&(&j * &u));
        if s.ncols() > 0 {
            s = linalg::orthonormalize(&(&j * &s));
        }
        us.push(u.clone());
        ss.push(s.clone());
    }
    Splitting::new(seq.first_index(), us, ss)
}

/// An ambient map with its Jacobian, acting on R^d or the flat torus.
pub struct AmbientMap {
    pub dim: usize,
    pub map: MapFn,
    pub jac: JacFn,
    pub torus: bool,
}

impl AmbientMap {
    pub fn cat_map() -> Self {
        let a = cat_matrix();
        let a2 = a.clone();
        AmbientMap {
            dim: 2,
            map: Arc::new(move |x: &DVector<f64>| &a * x),
            jac: Arc::new(move |_: &DVector<f64>| a2.clone()),
            torus: true,
        }
    }
}

/// Wrap a displacement to its nearest representative modulo Z^d.
pub fn wrap_torus(v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|&t| t - t.round()))
}

/// Adapted system: germs in frames along the orbit plus the extracted
/// uniform rate bound.
pub struct ChartSystem {
    pub seq: GermSequence,
    pub split: Splitting,
    /// Max over probes of the displayed rate, angle-distortion and Hölder
    /// bounds.
    pub rate_bound_estimate: f64,
}

/// Local-coordinate germs along an orbit: germ n sends frame-n coordinates
/// at x_n to frame-(n+1) coordinates at x_{n+1}. Verifies f(x_n) = x_{n+1}
/// within 1e-10 and extracts the uniform rate bound from probes.
pub fn chart_adapter(
    map: &AmbientMap,
    orbit: &[DVector<f64>],
    frames: &[DMatrix<f64>],
    alpha: f64,
    chart_half_width: f64,
) -> Result<ChartSystem> {
    if orbit.len() < 2 || frames.len() != orbit.len() {
        return Err(Error::Config("need >= 2 orbit points and matching frames".into()));
    }
    let d = map.dim;
    let torus = map.torus;
    let mut germs = Vec::with_capacity(orbit.len() - 1);
    for n in 0..orbit.len() - 1 {
        let image = (map.map)(&orbit[n]);
        let gap_raw = &image - &orbit[n + 1];
        let gap = if torus { wrap_torus(&gap_raw) } else { gap_raw };
        if gap.norm() > 1e-10 {
            return Err(Error::OrbitMismatch { step: n, gap: gap.norm() });
        }
        let base = orbit[n].clone();
        let next = orbit[n + 1].clone();
        let frame = frames[n].clone();
        let frame_next_t = frames[n + 1].transpose();
        let f = map.map.clone();
        let germ_map: MapFn = Arc::new(move |v: &DVector<f64>| {
            let y = f(&(&base + &frame * v));
            let diff = &y - &next;
            let diff = if torus { wrap_torus(&diff) } else { diff };
            &frame_next_t * diff
        });
        let base_j = orbit[n].clone();
        let frame_j = frames[n].clone();
        let frame_next_t_j = frames[n + 1].transpose();
        let fj = map.jac.clone();
        let germ_jac: JacFn = Arc::new(move |v: &DVector<f64>| {
            &frame_next_t_j * fj(&(&base_j + &frame_j * v)) * &frame_j
        });
        germs.push(Germ::new(
            d,
            germ_map,
            Some(germ_jac),
            DomainBox::symmetric(d, chart_half_width),
        )?);
    }

    // probe the three displayed uniform bounds
    let mut rate_bound: f64 = 0.0;
    for (n, g) in germs.iter().enumerate() {
        for probe in 0..8 {
            let x = linalg::halton_in_cube(probe, d, chart_half_width * 0.9);
            let j = g.jacobian(&x);
            let sv = j.clone().svd(false, false).singular_values;
            for s in sv.iter() {
                rate_bound = rate_bound.max(s.ln().abs());
            }
            let v = linalg::halton_unit(probe + 3 * n, d);
            let w = linalg::halton_unit(probe + 3 * n + 17, d);
            let ang = linalg::vector_angle(&v, &w);
            if ang.sin() > 1e-6 {
                let ang2 = linalg::vector_angle(&(&j * v), &(&j * w));
                if ang2.sin() > 1e-12 {
                    rate_bound = rate_bound.max((ang2.sin() / ang.sin()).ln().abs());
                }
            }
        }
        let h = holder_estimate(g, alpha, chart_half_width * 0.9, 12);
        rate_bound = rate_bound.max(h.lower_bound);
    }

    let seq = GermSequence::new(germs, 0, alpha, rate_bound.max(1e-8))?;
    let split = auto_eigen_splitting(&seq)?;
    Ok(ChartSystem { seq, split, rate_bound_estimate: rate_bound })
}

/// Build the closing-segment data for an almost-periodic orbit: germs along
/// the points, coordinate Jacobian at the final point, and the flat
/// re-centering from the final chart to the initial one.
pub fn segment_from_orbit(
    map: &AmbientMap,
    orbit: &[DVector<f64>],
    frames: &[DMatrix<f64>],
    alpha: f64,
    chart_half_width: f64,
) -> Result<crate::closing::SegmentData> {
    let adapted = chart_adapter(map, orbit, frames, alpha, chart_half_width)?;
    let p = orbit.len() - 1;
    let jac_end =
        frames[p].transpose() * (map.jac)(&orbit[p]) * &frames[p];
    let gap_raw = orbit[p].clone() - &orbit[0];
    let gap = if map.torus { wrap_torus(&gap_raw) } else { gap_raw };
    let recenter_rot = frames[0].transpose() * &frames[p];
    let recenter_shift = frames[0].transpose() * &gap;
    Ok(crate::closing::SegmentData {
        seq: adapted.seq,
        split: adapted.split,
        jac_end,
        recenter_rot,
        recenter_shift,
        endpoint_distance: gap.norm(),
        rate_bound: adapted.rate_bound_estimate.max(1e-8),
    })
}
