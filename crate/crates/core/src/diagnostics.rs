//! Effective-hyperbolicity diagnostics for a sequence of linear data:
//! the defect from domination, the effective rate, effective hyperbolic
//! times, Pliss-type index sets, non-uniformity constants, and the
//! beta-exceedance route to verifying effective hyperbolicity.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::germ::{compose_orbit, GermSequence, LinearData};

/// Per-index effective rates derived from linear data and a threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveSeries {
    /// Defect from domination, max(0, (lambda_s - lambda_u)/alpha).
    pub delta: Vec<f64>,
    /// Effective rate lambda_e.
    pub lambda_e: Vec<f64>,
    /// Indicator of beta_n > beta_bar.
    pub beta_flag: Vec<bool>,
    pub beta_bar: f64,
    pub alpha: f64,
    /// L' = (1 + 1/alpha) L, the uniform lower bound -L' <= lambda_e.
    pub l_prime: f64,
    /// Set when the first index exceeded beta_bar but had no predecessor to
    /// evaluate the ratio branch; the dominated branch was used instead.
    pub missing_predecessor: bool,
}

impl EffectiveSeries {
    pub fn len(&self) -> usize {
        self.lambda_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_e.is_empty()
    }
}

/// Compute the effective series of a contiguous block of linear data.
///
/// The rate is lambda_u - Delta below the threshold and is additionally
/// capped by the per-step Hölder-constant decay log(beta_{n-1}/beta_n)/alpha
/// above it. At the first index of the range the ratio branch has no
/// predecessor; the dominated branch is used and flagged.
pub fn effective_series(
    lin: &[LinearData],
    alpha: f64,
    beta_bar: f64,
    rate_bound: f64,
) -> Result<EffectiveSeries> {
    if lin.is_empty() {
        return Err(Error::Config("empty linear data".into()));
    }
    if lin.iter().any(|l| l.beta < 1.0) {
        return Err(Error::PreconditionViolated("beta must be >= 1".into()));
    }
    let mut delta = Vec::with_capacity(lin.len());
    let mut lambda_e = Vec::with_capacity(lin.len());
    let mut beta_flag = Vec::with_capacity(lin.len());
    let mut missing_predecessor = false;
    for (i, l) in lin.iter().enumerate() {
        let d = if l.lambda_s == f64::NEG_INFINITY {
            0.0
        } else {
            ((l.lambda_s - l.lambda_u) / alpha).max(0.0)
        };
        let base = l.lambda_u - d;
        let flag = l.beta > beta_bar;
        let le = if !flag {
            base
        } else if i == 0 {
            missing_predecessor = true;
            base
        } else {
            base.min((lin[i - 1].beta / l.beta).ln() / alpha)
        };
        delta.push(d);
        lambda_e.push(le);
        beta_flag.push(flag);
    }
    Ok(EffectiveSeries {
        delta,
        lambda_e,
        beta_flag,
        beta_bar,
        alpha,
        l_prime: (1.0 + 1.0 / alpha) * rate_bound,
        missing_predecessor,
    })
}

/// Prefix sums of (values[j] - rate): p[0] = 0, p[n] = sum_{j<n}.
fn shifted_prefix_sums(values: &[f64], rate: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(values.len() + 1);
    p.push(0.0);
    let mut acc = 0.0;
    for &v in values {
        acc += v - rate;
        p.push(acc);
    }
    p
}

/// Times n in [1, N] at which every trailing average of `values` meets
/// `rate`: (1/(n-k)) sum_{j=k}^{n-1} values[j] >= rate for all 0 <= k < n.
/// Linear-time scan over prefix sums.
pub fn effective_hyperbolic_times(values: &[f64], rate: f64) -> Vec<usize> {
    let p = shifted_prefix_sums(values, rate);
    let mut out = Vec::new();
    let mut running_max = f64::NEG_INFINITY;
    for n in 1..p.len() {
        running_max = running_max.max(p[n - 1]);
        if p[n] >= running_max {
            out.push(n);
        }
    }
    out
}

/// Quadratic-time transcription of the defining inequality (trailing sums
/// accumulated from the right); test oracle and cross-check.
pub fn effective_hyperbolic_times_brute(values: &[f64], rate: f64) -> Vec<usize> {
    let n_max = values.len();
    let mut out = Vec::new();
    for n in 1..=n_max {
        let mut ok = true;
        let mut sum = 0.0;
        for k in (0..n).rev() {
            sum += values[k];
            if sum < rate * (n - k) as f64 {
                ok = false;
                break;
            }
        }
        if ok {
            out.push(n);
        }
    }
    out
}

/// Pliss-type selection: all indices n_i in [1, N] whose trailing sums
/// dominate at rate `chi_hat`, together with the guaranteed density
/// rho = (chi - chi_hat)/(cap - chi_hat).
pub fn pliss_times(
    values: &[f64],
    cap: f64,
    chi: f64,
    chi_hat: f64,
) -> Result<(Vec<usize>, f64)> {
    if !(cap >= chi && chi > chi_hat && chi_hat > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "need cap >= chi > chi_hat > 0, got {cap} / {chi} / {chi_hat}"
        )));
    }
    let n = values.len() as f64;
    let total: f64 = values.iter().sum();
    if total < chi * n {
        return Err(Error::PreconditionViolated(format!(
            "average hypothesis fails: sum {total} < chi*N = {}",
            chi * n
        )));
    }
    if let Some(bad) = values.iter().find(|&&v| v > cap) {
        return Err(Error::PreconditionViolated(format!(
            "cap hypothesis fails: value {bad} > cap {cap}"
        )));
    }
    let rho = (chi - chi_hat) / (cap - chi_hat);
    Ok((effective_hyperbolic_times(values, chi_hat), rho))
}

/// Minimal non-uniformity constants: M[n] = max(0, max_{m<n} ((n-m) rate -
/// sum_{k=m}^{n-1} values[k])) for n = 0..=N. M[n] = 0 iff n is an effective
/// hyperbolic time (or n = 0).
pub fn nonuniformity_sequence(values: &[f64], rate: f64) -> Vec<f64> {
    let p = shifted_prefix_sums(values, rate);
    let mut out = Vec::with_capacity(p.len());
    let mut running_max = f64::NEG_INFINITY;
    for n in 0..p.len() {
        if n == 0 {
            out.push(0.0);
        } else {
            running_max = running_max.max(p[n - 1]);
            out.push((running_max - p[n]).max(0.0));
        }
    }
    out
}

/// Brute-force transcription of the non-uniformity constants; test oracle.
pub fn nonuniformity_sequence_brute(values: &[f64], rate: f64) -> Vec<f64> {
    let n_max = values.len();
    let mut out = vec![0.0];
    for n in 1..=n_max {
        let mut m_val: f64 = 0.0;
        let mut sum = 0.0;
        for m in (0..n).rev() {
            sum += values[m];
            m_val = m_val.max(rate * (n - m) as f64 - sum);
        }
        out.push(m_val);
    }
    out
}

/// Backward-window variant for sequences indexed toward the past: constants
/// over windows [m, n) with the range end pinned at the last entry, mirrored
/// by index reversal.
pub fn nonuniformity_sequence_backward(values: &[f64], rate: f64) -> Vec<f64> {
    let rev: Vec<f64> = values.iter().rev().cloned().collect();
    let mut m = nonuniformity_sequence(&rev, rate);
    m.reverse();
    m
}

/// Upper bound on the non-uniformity constants that sees the Hölder/angle
/// data only through threshold exceedances: replaces lambda_e by
/// lambda_u - Delta - 2 L' 1(beta > beta_bar). Dominates
/// `nonuniformity_sequence` pointwise.
pub fn nonuniformity_upper_bound(
    lin: &[LinearData],
    series: &EffectiveSeries,
    rate: f64,
) -> Vec<f64> {
    let surrogate: Vec<f64> = lin
        .iter()
        .zip(&series.delta)
        .zip(&series.beta_flag)
        .map(|((l, &d), &flag)| {
            l.lambda_u - d - if flag { 2.0 * series.l_prime } else { 0.0 }
        })
        .collect();
    nonuniformity_sequence(&surrogate, rate)
}

/// One candidate row of the beta-exceedance tradeoff.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BetaCandidate {
    pub beta_bar: f64,
    /// Empirical density of indices with beta_n > beta_bar.
    pub density: f64,
    /// Implied lower bound chi_u - density * 2 L' on the effective average.
    pub implied_bound: f64,
}

/// Verification report via exceedance densities: the dominated average
/// chi_u, the density curve over candidate thresholds, and the best implied
/// lower bound on the effective average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaDensityReport {
    pub chi_u: f64,
    pub candidates: Vec<BetaCandidate>,
    pub best: BetaCandidate,
    pub effectively_hyperbolic: bool,
}

/// Evaluate the beta-density route on a finite window: for each candidate
/// threshold, bound the effective average below by the dominated average
/// minus the exceedance density times the worst-case drop per exceedance.
pub fn beta_density_report(lin: &[LinearData], alpha: f64, rate_bound: f64) -> Result<BetaDensityReport> {
    if lin.is_empty() {
        return Err(Error::Config("empty linear data".into()));
    }
    let n = lin.len() as f64;
    let deltas: Vec<f64> = lin
        .iter()
        .map(|l| {
            if l.lambda_s == f64::NEG_INFINITY {
                0.0
            } else {
                ((l.lambda_s - l.lambda_u) / alpha).max(0.0)
            }
        })
        .collect();
    let chi_u =
        lin.iter().zip(&deltas).map(|(l, d)| l.lambda_u - d).sum::<f64>() / n;
    let l_prime = (1.0 + 1.0 / alpha) * rate_bound;

    let mut betas: Vec<f64> = lin.iter().map(|l| l.beta).collect();
    betas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    betas.dedup();
    let mut candidates = Vec::with_capacity(betas.len());
    for &bb in &betas {
        let density = lin.iter().filter(|l| l.beta > bb).count() as f64 / n;
        candidates.push(BetaCandidate {
            beta_bar: bb,
            density,
            implied_bound: chi_u - density * 2.0 * l_prime,
        });
    }
    let best = candidates
        .iter()
        .cloned()
        .max_by(|a, b| a.implied_bound.partial_cmp(&b.implied_bound).unwrap())
        .expect("nonempty candidates");
    Ok(BetaDensityReport {
        chi_u,
        candidates,
        best,
        effectively_hyperbolic: best.implied_bound > 0.0,
    })
}

/// Summary quantities of a finite-window diagnostic run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveReport {
    /// Minimum of prefix averages of lambda_e over window lengths >= N/4
    /// (finite proxy for the asymptotic lower average).
    pub chi_e: f64,
    /// Same proxy for the average of lambda_u - lambda_s (None when E^s is
    /// trivial).
    pub chi_g: Option<f64>,
    /// Maximum of prefix averages of lambda_s (None when E^s is trivial).
    pub chi_s: Option<f64>,
    pub chi_hat: f64,
    pub beta_bar: f64,
    /// Guaranteed lower density (chi_e - chi_hat)/(L - chi_hat), clamped at 0.
    pub density_lb: f64,
    pub gamma_count: usize,
    pub window: usize,
    /// Empirical density #Gamma / N.
    pub gamma_density: f64,
    pub effectively_hyperbolic: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_lyapunov: Option<f64>,
}

/// Minimum/maximum of prefix averages over window lengths >= len/4.
pub fn prefix_average_extremum(values: &[f64], take_min: bool) -> f64 {
    let n = values.len();
    let start = (n / 4).max(1);
    let mut acc = 0.0;
    let mut best = if take_min { f64::INFINITY } else { f64::NEG_INFINITY };
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        let m = i + 1;
        if m >= start {
            let avg = acc / m as f64;
            best = if take_min { best.min(avg) } else { best.max(avg) };
        }
    }
    best
}

/// Assemble the window report for given linear data, series and threshold.
pub fn effective_report(
    lin: &[LinearData],
    series: &EffectiveSeries,
    chi_hat: f64,
    rate_bound: f64,
    top_lyapunov: Option<f64>,
) -> EffectiveReport {
    let n = series.len();
    let chi_e = prefix_average_extremum(&series.lambda_e, true);
    let trivial_stable = lin.iter().any(|l| l.lambda_s == f64::NEG_INFINITY);
    let (chi_g, chi_s) = if trivial_stable {
        (None, None)
    } else {
        let gaps: Vec<f64> = lin.iter().map(|l| l.lambda_u - l.lambda_s).collect();
        let stables: Vec<f64> = lin.iter().map(|l| l.lambda_s).collect();
        (
            Some(prefix_average_extremum(&gaps, true)),
            Some(prefix_average_extremum(&stables, false)),
        )
    };
    let gamma = effective_hyperbolic_times(&series.lambda_e, chi_hat);
    let density_lb = ((chi_e - chi_hat) / (rate_bound - chi_hat)).max(0.0);
    EffectiveReport {
        chi_e,
        chi_g,
        chi_s,
        chi_hat,
        beta_bar: series.beta_bar,
        density_lb,
        gamma_count: gamma.len(),
        window: n,
        gamma_density: gamma.len() as f64 / n as f64,
        effectively_hyperbolic: chi_e > 0.0,
        top_lyapunov,
    }
}

/// Default detection threshold: half the estimated effective average.
pub fn default_chi_hat(series: &EffectiveSeries) -> f64 {
    0.5 * prefix_average_extremum(&series.lambda_e, true)
}

/// Top Lyapunov exponent of the derivative cocycle along the orbit of x,
/// by power iteration with renormalization.
pub fn top_lyapunov_exponent(seq: &GermSequence, x: &DVector<f64>, steps: usize) -> Result<f64> {
    let m = seq.first_index();
    let n = m + steps as i64;
    if n > seq.last_index() + 1 {
        return Err(Error::Config("window exceeds germ range".into()));
    }
    let orbit = compose_orbit(seq, m, n, x)?;
    let d = seq.dim();
    let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut acc = 0.0;
    for (i, k) in (m..n).enumerate() {
        v = seq.germ(k).jacobian(&orbit[i]) * v;
        let norm = v.norm();
        acc += norm.ln();
        v /= norm;
    }
    Ok(acc / steps as f64)
}
