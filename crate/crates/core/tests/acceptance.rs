//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities once its assertions hold at the stated
//! tolerances. Run with `cargo test --test acceptance -- --nocapture` to see
//! every line.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hypkit::admissible::{AdmissibleManifold, ClassParams};
use hypkit::catalog::{self, builtin, cat_matrix, AmbientMap};
use hypkit::cli::{analyze, RunConfig};
use hypkit::closing::{check_segment, close_orbit, ClosingSeeds};
use hypkit::diagnostics::{
    effective_hyperbolic_times, effective_hyperbolic_times_brute, effective_series,
    nonuniformity_sequence, nonuniformity_sequence_brute, pliss_times, prefix_average_extremum,
};
use hypkit::germ::{extract_linear_data, ExtractOptions, LinearData};
use hypkit::rates::{build_params, check_parameter_conditions, suggest_seeds, ParamSeq, RateWindow};
use hypkit::transform::{
    check_attraction, check_expansion, graph_invariance_error, push, solve_unstable_family,
    transform_step, TransformCtx, TransformOptions, UnstableOptions,
};

fn elapsed_under(start: Instant, limit_s: f64, label: &str) {
    let dt = start.elapsed().as_secs_f64();
    assert!(dt < limit_s, "{label}: runtime {dt:.2}s exceeds {limit_s}s");
}

fn config(system: &str, window: usize) -> RunConfig {
    RunConfig::from_str(&format!(
        r#"{{
            "system": {{
                "dimension": 2, "alpha": 1.0,
                "maps": [{{"builtin": "{system}", "params": []}}],
                "splitting": "builtin"
            }},
            "window": {window}
        }}"#
    ))
    .unwrap()
}

/// Criterion 1: the alternating two-gap system has positive top Lyapunov
/// exponent but is not effectively hyperbolic.
#[test]
fn criterion_1_alternating_dichotomy() {
    let start = Instant::now();
    let cfg = config("alt_3_half", 10_000);
    let a = analyze(&cfg).unwrap();
    let neg_log2 = -(2.0_f64.ln());
    assert!(
        a.report.chi_e <= neg_log2 + 1e-12,
        "chi_e = {} above -log 2",
        a.report.chi_e
    );
    assert!(!a.report.effectively_hyperbolic);
    let top = a.report.top_lyapunov.unwrap();
    let expect = 0.5 * (3.0_f64.ln() - 2.0_f64.ln());
    assert!((top - expect).abs() <= 1e-6, "top exponent {top} vs {expect}");
    elapsed_under(start, 1.0, "criterion 1");
    println!(
        "criterion 1 PASS: chi_e = {:.12} <= -log2, top Lyapunov = {:.9} = (log3-log2)/2 +- 1e-6",
        a.report.chi_e, top
    );
}

/// Criterion 2: block-exponent non-uniformity constants grow like the
/// bad-run length while window averages stay near 1/2.
#[test]
fn criterion_2_block_nonuniformity() {
    let start = Instant::now();
    let n = 1 << 14;
    let sys = builtin("pliss_blocks", &[], n).unwrap();
    let lin = extract_linear_data(&sys.seq, &sys.split, &ExtractOptions::default()).unwrap();
    let series = effective_series(&lin, 1.0, 10.0, 4.0).unwrap();
    let chi_hat = 0.4;
    let m = nonuniformity_sequence(&series.lambda_e, chi_hat);
    for k in 4..=10usize {
        let idx = (1usize << k) - 1;
        let bound = 2.0_f64.powi(k as i32 - 2) * (3.0 - chi_hat);
        assert!(
            m[idx] >= bound,
            "M at dyadic index 2^{k} is {} < {bound}",
            m[idx]
        );
    }
    let k14 = 1usize << 14;
    let avg: f64 = series.lambda_e[..k14].iter().sum::<f64>() / k14 as f64;
    assert!((avg - 0.5).abs() <= 0.05, "window average {avg} not near 1/2");
    elapsed_under(start, 1.0, "criterion 2");
    println!(
        "criterion 2 PASS: M_(2^k) >= 2^(k-2)(3-0.4) for k=4..10, average over 2^14 = {avg:.6}"
    );
}

/// Criterion 3: the Pliss selection matches brute force and attains the
/// guaranteed density on random admissible sequences.
#[test]
fn criterion_3_pliss_density() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200;
    let (cap, chi, chi_hat): (f64, f64, f64) = (1.0, 0.6, 0.2);
    let rho = (chi - chi_hat) / (cap - chi_hat);
    assert!((rho - 0.5).abs() < 1e-15);
    let mut min_count = usize::MAX;
    for trial in 0..100 {
        let values: Vec<f64> = loop {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.0)).collect();
            if v.iter().sum::<f64>() >= chi * n as f64 {
                break v;
            }
        };
        let (times, rho_out) = pliss_times(&values, cap, chi, chi_hat).unwrap();
        let brute = effective_hyperbolic_times_brute(&values, chi_hat);
        assert_eq!(times, brute, "trial {trial}: fast/brute disagree");
        assert!(
            times.len() as f64 >= rho_out * n as f64,
            "trial {trial}: {} below rho N = {}",
            times.len(),
            rho_out * n as f64
        );
        min_count = min_count.min(times.len());
    }
    elapsed_under(start, 1.0, "criterion 3");
    println!(
        "criterion 3 PASS: 100/100 trials, fast == brute, min count {min_count} >= rho N = 100"
    );
}

/// Criterion 4: linear-scan detection equals the quadratic definition and
/// the zero set of the constants equals the detected times.
#[test]
fn criterion_4_eht_m_consistency() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..200 {
        let n = rng.gen_range(20..=200);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let chi_hat = rng.gen_range(0.05..0.5);
        let fast = effective_hyperbolic_times(&values, chi_hat);
        let brute = effective_hyperbolic_times_brute(&values, chi_hat);
        assert_eq!(fast, brute, "trial {trial}");
        let m = nonuniformity_sequence(&values, chi_hat);
        let m_brute = nonuniformity_sequence_brute(&values, chi_hat);
        // values agree to summation-order rounding; the zero set is exact
        for (a, b) in m.iter().zip(&m_brute) {
            assert!((a - b).abs() <= 1e-12, "trial {trial}: {a} vs {b}");
        }
        for t in 1..=n {
            assert_eq!(m[t] == 0.0, fast.contains(&t), "trial {trial}, time {t}");
        }
    }
    elapsed_under(start, 2.0, "criterion 4");
    println!("criterion 4 PASS: 200/200 random sequences, fast == brute and {{M=0}} == Gamma");
}

/// Criterion 5: the graph transform is exact on the diagonal linear system
/// and the parameter recursions hold at equality.
#[test]
fn criterion_5_linear_exactness() {
    let start = Instant::now();
    let sys = builtin("diag_linear", &[2.0, 0.5], 1).unwrap();
    let lin = extract_linear_data(&sys.seq, &sys.split, &ExtractOptions::default()).unwrap();
    // class parameters evolved at recursion equality with delta = 0
    let c = 0.11;
    let mut params = ParamSeq::uniform(1, 1.0, 2.0 * c, 2.0 * c, 1.0, 0.0);
    params.r = vec![1.0, 2.0];
    params.kappa = vec![2.0 * c, 2.0 * c / 8.0];
    params.gamma = vec![2.0 * c, 2.0 * c / 8.0 * 2.0];
    let rep = check_parameter_conditions(&lin, &params, 1.0, 0.0, 1e9, 1e9);
    assert!(rep.rec_r[0] && rep.rec_t[0] && rep.rec_s[0] && rep.rec_k[0]);
    let opts = TransformOptions { zhat_coeff: Some(vec![0.0]), ..Default::default() };
    let ctx = TransformCtx::new(&sys.seq, &sys.split, &lin, &params, opts).unwrap();
    let m = AdmissibleManifold::from_fn(
        1,
        1,
        16,
        ClassParams::through_origin(1.0, 2.0 * c, 2.0 * c, 1.0),
        |v| DVector::from_vec(vec![c * v[0] * v[0]]),
        Some(|v: &DVector<f64>| DMatrix::from_row_slice(1, 1, &[2.0 * c * v[0]])),
    );
    let (out, _) = transform_step(&ctx, 0, &m).unwrap();
    let mut worst: f64 = 0.0;
    for t in [-2.0, -1.3, -0.4, 0.0, 0.7, 1.9, 2.0] {
        let v = DVector::from_vec(vec![t]);
        worst = worst.max((out.evaluate(&v).unwrap()[0] - c / 8.0 * t * t).abs());
    }
    assert!(worst <= 1e-13, "pushforward deviates from c/8 v^2 by {worst}");
    elapsed_under(start, 1.0, "criterion 5");
    println!(
        "criterion 5 PASS: quadratic graph maps to (c/8) v^2 within {worst:.2e}, recursions hold at equality"
    );
}

/// Criterion 6: the backward fixed point of the quadratic model has second
/// derivative 4/7 at the origin (coefficient 2/7).
#[test]
fn criterion_6_unstable_oracle() {
    let start = Instant::now();
    let n = 64;
    let sys = builtin("quad_hyperbolic", &[], n).unwrap();
    let seq = sys.seq.rebase(-(n as i64));
    let split = sys.split.rebase(-(n as i64));
    let lin = extract_linear_data(&seq, &split, &ExtractOptions::default()).unwrap();
    let opts = UnstableOptions::uniform(0.05, 2.0, 0.1);
    let (family, report, _) = solve_unstable_family(&seq, &split, &lin, &opts).unwrap();
    assert!(report.converged);
    assert!(report.c0_residual <= 1e-9, "residual {}", report.c0_residual);
    let psi0 = family.last().unwrap();
    let h = 0.025;
    let plus = psi0.evaluate(&DVector::from_vec(vec![h])).unwrap()[0];
    let minus = psi0.evaluate(&DVector::from_vec(vec![-h])).unwrap()[0];
    let a2 = (plus + minus) / (2.0 * h * h);
    assert!((a2 - 2.0 / 7.0).abs() <= 1e-6, "curvature coefficient {a2} vs 2/7");
    // graph invariance probes over the final window
    let from = -(report.window as i64);
    let offset = (from - seq.first_index()) as usize;
    let sub: Vec<_> = (from..=-1).map(|k| seq.germ(k).clone()).collect();
    let sub_seq = hypkit::germ::GermSequence::new(sub, from, 1.0, seq.rate_bound()).unwrap();
    let params = ParamSeq::uniform(report.window, 0.05, 2.0, 0.1, 1.0, 0.0);
    let ctx = TransformCtx::new(
        &sub_seq,
        &split,
        &lin[offset..],
        &params,
        TransformOptions::default(),
    )
    .unwrap();
    let inv = graph_invariance_error(&ctx, &family, from, 50).unwrap();
    assert!(inv <= 1e-8, "graph invariance error {inv}");
    elapsed_under(start, 10.0, "criterion 6");
    println!(
        "criterion 6 PASS: curvature coefficient = {a2:.9} (2/7 +- 1e-6), residual {:.2e}, invariance {inv:.2e}",
        report.c0_residual
    );
}

/// Criterion 7: expansion and attraction inequalities hold on the quadratic
/// model with parameters built from its effective rates.
#[test]
fn criterion_7_expansion_attraction() {
    let start = Instant::now();
    let n = 8;
    let sys = builtin("quad_hyperbolic", &[], n).unwrap();
    let lin = extract_linear_data(&sys.seq, &sys.split, &ExtractOptions::default()).unwrap();
    let series = effective_series(&lin, 1.0, 2.0, sys.seq.rate_bound()).unwrap();
    let rates = RateWindow { chi_hat_u: 0.5, chi_bar_u: 0.3, chi_hat_s: -0.5, chi_bar_s: -0.3 };
    let seeds = suggest_seeds(&lin, &series, &rates, sys.seq.rate_bound()).unwrap();
    let (params, checks) = build_params(&lin, &series, &rates, &seeds, sys.seq.rate_bound()).unwrap();
    // all indices are detection times here
    assert!(checks.m_u.iter().all(|&m| m == 0.0));
    let ctx = TransformCtx::new(
        &sys.seq,
        &sys.split,
        &lin,
        &params,
        TransformOptions::default(),
    )
    .unwrap();
    let m0 = AdmissibleManifold::zero(1, 1, 16, ctx.class_at(0));
    let (manifolds, reports) = push(&ctx, m0, 0, n as i64).unwrap();
    assert!(reports.iter().all(|r| r.domain_coverage == 1.0));
    let mut pairs_total = 0;
    let mut min_margin = f64::INFINITY;
    for end in 1..=n as i64 {
        let bound = ((end as f64) * rates.chi_bar_u).exp();
        let check = check_expansion(
            &sys.seq,
            &sys.split,
            &manifolds,
            0,
            0,
            end,
            125,
            7 + end as u64,
            bound,
        )
        .unwrap();
        assert!(
            check.min_factor >= bound * (1.0 - 1e-12),
            "expansion to step {end}: {} < {bound}",
            check.min_factor
        );
        pairs_total += check.pairs_used;
        min_margin = min_margin.min(check.min_factor / bound);
    }
    assert!(pairs_total >= 1000, "only {pairs_total} pairs sampled");
    // vertical attraction of an offset orbit
    let offset = params.r[0] * 1e-3;
    let x0 = sys.split.ambient(0, &DVector::zeros(1), &DVector::from_vec(vec![offset]));
    let att = check_attraction(&ctx, &manifolds, 0, &x0, n).unwrap();
    assert!(att.ratios.len() >= n - 1);
    for (i, (r, b)) in att.ratios.iter().zip(&att.bounds).enumerate() {
        assert!(*r <= b * (1.0 + 1e-12), "attraction step {i}: ratio {r} > bound {b}");
    }
    elapsed_under(start, 10.0, "criterion 7");
    println!(
        "criterion 7 PASS: {pairs_total} pairs, min expansion margin {min_margin:.3}x, attraction ratios within bounds"
    );
}

/// Criterion 8: closing a perturbed true period-5 orbit of the toral
/// automorphism recovers the exact periodic point.
#[test]
fn criterion_8_closing_cat_orbit() {
    let start = Instant::now();
    let a = cat_matrix();
    // exact period-5 point: orbit (8,5)/11 -> (10,2)/11 -> (0,1)/11 -> ...
    let z_true = DVector::from_vec(vec![8.0 / 11.0, 5.0 / 11.0]);
    let delta = DVector::from_vec(vec![0.6e-4, -0.8e-4]);
    let x0 = &z_true + &delta;
    let map = AmbientMap::cat_map();
    let mut orbit = vec![x0.clone()];
    for _ in 0..5 {
        let next = (&a * orbit.last().unwrap()).map(|t: f64| t.rem_euclid(1.0));
        orbit.push(next);
    }
    let frames = vec![DMatrix::identity(2, 2); 6];
    let segment = catalog::segment_from_orbit(&map, &orbit, &frames, 1.0, 0.2).unwrap();
    let report = check_segment(&segment, 0.9, -0.9, 0.1).unwrap();
    assert!(report.verdict);
    let p = &report.minimal;
    assert!(
        p.m_u == 0.0 && p.m_s == 0.0 && p.m_hat_u == 0.0 && p.m_hat_s == 0.0,
        "uniform segment should be zero-feasible: {p:?}"
    );
    let seeds = ClosingSeeds {
        r: 0.05,
        tau: 0.05,
        sigma: 0.3,
        kappa: 1.0,
        gamma: 0.4,
        ..Default::default()
    };
    let result = close_orbit(&segment, &report, &seeds, 0.8, -0.8).unwrap();
    assert!(result.residual <= 1e-8, "residual {}", result.residual);
    // recovered ambient point vs the exact periodic point
    let z = DVector::from_vec(result.z.clone());
    let recovered = &x0 + &z;
    let gap = catalog::wrap_torus(&(recovered - &z_true)).norm();
    assert!(gap <= 1e-8, "distance to the exact periodic point: {gap}");
    // eigenvalue moduli of A^5
    let lam = ((3.0 + 5.0_f64.sqrt()) / 2.0).powi(5);
    assert!((result.eigenvalue_moduli[0] - lam).abs() <= 1e-6 * lam);
    assert!((result.eigenvalue_moduli[1] - 1.0 / lam).abs() <= 1e-6);
    assert!(result.hyperbolic);
    assert!(result
        .eigenvalue_moduli
        .iter()
        .all(|&m| m < 0.95 || m > 1.05));
    elapsed_under(start, 5.0, "criterion 8");
    println!(
        "criterion 8 PASS: recovered periodic point within {gap:.2e}, residual {:.2e}, moduli {:?}",
        result.residual, result.eigenvalue_moduli
    );
}

/// Criterion 9: the detected density of effective hyperbolic times meets the
/// guaranteed lower bound on long random windows.
#[test]
fn criterion_9_density_bound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let (rate_bound, chi_hat) = (1.0, 0.2);
    let mut worst_slack = f64::INFINITY;
    for trial in 0..100 {
        let lin: Vec<LinearData> = (0..n)
            .map(|_| {
                let lu = rng.gen_range(-0.3..1.0);
                LinearData {
                    lambda_u: lu,
                    lambda_s: lu - rng.gen_range(0.1..1.0),
                    theta: std::f64::consts::FRAC_PI_2,
                    beta: 1.0,
                }
            })
            .collect();
        let series = effective_series(&lin, 1.0, 10.0, rate_bound).unwrap();
        let chi_e = prefix_average_extremum(&series.lambda_e, true);
        if chi_e <= chi_hat {
            // not effectively hyperbolic at this threshold; redraw
            continue;
        }
        let gamma = effective_hyperbolic_times(&series.lambda_e, chi_hat);
        let density = gamma.len() as f64 / n as f64;
        let bound = (chi_e - chi_hat) / (rate_bound - chi_hat) - 0.02;
        assert!(
            density >= bound,
            "trial {trial}: density {density} below bound {bound}"
        );
        worst_slack = worst_slack.min(density - bound);
    }
    elapsed_under(start, 5.0, "criterion 9");
    println!("criterion 9 PASS: 100 windows of 1e4, min density slack {worst_slack:.4}");
}
