//! Derived nonlinear rates and admissibility conditions for the graph
//! transform: the corrected expansion/contraction exponents, the recursive
//! parameter relations and bounds they must satisfy, and a constructor that
//! realizes a valid parameter sequence from effective rates.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{nonuniformity_sequence, EffectiveSeries};
use crate::error::{Error, Result};
use crate::germ::LinearData;

/// Class parameter sequences over states 0..=N for a window of N germs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSeq {
    pub r: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma: Vec<f64>,
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub xi: f64,
    pub gamma_bar: f64,
    /// Scale factors of the effective-rate construction (r_n = r_bar c_n),
    /// when built that way.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<ConditionReport>,
}

impl ParamSeq {
    /// Number of germ steps covered (states minus one).
    pub fn steps(&self) -> usize {
        self.r.len() - 1
    }

    /// Uniform parameters through the origin: tau = sigma = 0, constant
    /// r, kappa, gamma.
    pub fn uniform(steps: usize, r: f64, kappa: f64, gamma: f64, alpha: f64, delta: f64) -> Self {
        ParamSeq {
            r: vec![r; steps + 1],
            tau: vec![0.0; steps + 1],
            sigma: vec![0.0; steps + 1],
            kappa: vec![kappa; steps + 1],
            gamma: vec![gamma; steps + 1],
            alpha,
            delta,
            xi: 0.0,
            gamma_bar: gamma,
            c: None,
            validity: None,
        }
    }
}

/// Derived rates per germ step, computed from linear data and parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedRates {
    pub eps_f: Vec<f64>,
    pub lambda_hat_u: Vec<f64>,
    pub lambda_hat_s: Vec<f64>,
    pub lambda_check_s: Vec<f64>,
    pub chi: Vec<f64>,
    pub eps_u: Vec<f64>,
    pub eps_s: Vec<f64>,
    pub eps_check: Vec<f64>,
    pub eps_chi: Vec<f64>,
    pub eps_sigma: Vec<f64>,
    /// Hölder-modulus coefficients of rho_n(t) = c1 t^alpha + c2 t^{2 alpha}.
    pub rho_c1: Vec<f64>,
    pub rho_c2: Vec<f64>,
}

fn sin_theta_next(lin: &[LinearData], n: usize, theta_final: Option<f64>) -> f64 {
    if n + 1 < lin.len() {
        lin[n + 1].theta.sin()
    } else {
        theta_final.unwrap_or(lin[n].theta).sin()
    }
}

/// Evaluate the derived rates over a window. `zhat_coeff` overrides the
/// Hölder coefficient of the nonlinearity modulus (default beta_n); supply
/// zeros for exactly linear germs. `theta_final` is the angle at the final
/// state (defaults to the last available angle).
pub fn derived_rates(
    lin: &[LinearData],
    params: &ParamSeq,
    zhat_coeff: Option<&[f64]>,
    theta_final: Option<f64>,
) -> Result<DerivedRates> {
    let n_steps = lin.len();
    if params.steps() < n_steps {
        return Err(Error::Config("parameter sequence shorter than window".into()));
    }
    let alpha = params.alpha;
    let mut out = DerivedRates {
        eps_f: Vec::with_capacity(n_steps),
        lambda_hat_u: Vec::with_capacity(n_steps),
        lambda_hat_s: Vec::with_capacity(n_steps),
        lambda_check_s: Vec::with_capacity(n_steps),
        chi: Vec::with_capacity(n_steps),
        eps_u: Vec::with_capacity(n_steps),
        eps_s: Vec::with_capacity(n_steps),
        eps_check: Vec::with_capacity(n_steps),
        eps_chi: Vec::with_capacity(n_steps),
        eps_sigma: Vec::with_capacity(n_steps),
        rho_c1: Vec::with_capacity(n_steps),
        rho_c2: Vec::with_capacity(n_steps),
    };
    for (n, l) in lin.iter().enumerate() {
        let b = zhat_coeff.map(|z| z[n]).unwrap_or(l.beta);
        let gamma_n = params.gamma[n];
        let gamma_next = params.gamma[n + 1];
        let reach = params.tau[n] + params.r[n] * (1.0 + gamma_n);
        let eps_f = b * reach.powf(alpha);
        let limit = l.lambda_u.exp() / (1.0 + gamma_n);
        if eps_f >= limit {
            return Err(Error::RateOverflow { at: n as i64, eps_f, limit });
        }
        let eps_u = (1.0 + gamma_n) * eps_f;
        let e_hat_u = l.lambda_u.exp() - eps_u;
        let lambda_hat_u = e_hat_u.ln();
        let eps_s = if eps_f == 0.0 {
            0.0
        } else {
            (1.0 + 1.0 / gamma_n).max(1.0 + gamma_next) * eps_f
        };
        let e_s = l.lambda_s.exp();
        let lambda_hat_s = (e_s + eps_s).ln();
        let eps_chi =
            ((1.0 - gamma_next) / (1.0 + gamma_n)).max(sin_theta_next(lin, n, theta_final) / (1.0 + gamma_n)).ln();
        let chi = lambda_hat_u + eps_chi;
        let eps_check = (1.0 + (l.lambda_s - lambda_hat_u).exp() * gamma_n) * eps_f
            + (1.0 + gamma_n) * (-lambda_hat_u).exp() * eps_f * eps_f;
        let lambda_check_s = (e_s + eps_check).ln();
        let rho_c1 = (-lambda_hat_u).exp() * (1.0 + (l.lambda_s - lambda_hat_u).exp() * gamma_n) * b;
        let rho_c2 = (-2.0 * lambda_hat_u).exp() * b * b;
        let eps_sigma = if params.tau[n] == 0.0 {
            0.0
        } else {
            (l.lambda_s - lambda_hat_u).exp()
                * params.kappa[n]
                * ((-lambda_hat_u).exp() * eps_f * params.tau[n]).powf(alpha)
                + (-lambda_hat_u).exp()
                    * (1.0 + gamma_n)
                    * b
                    * ((1.0 + (-lambda_hat_u).exp() * eps_f * (1.0 + gamma_n)) * params.tau[n])
                        .powf(alpha)
        };
        out.eps_f.push(eps_f);
        out.lambda_hat_u.push(lambda_hat_u);
        out.lambda_hat_s.push(lambda_hat_s);
        out.lambda_check_s.push(lambda_check_s);
        out.chi.push(chi);
        out.eps_u.push(eps_u);
        out.eps_s.push(eps_s);
        out.eps_check.push(eps_check);
        out.eps_chi.push(eps_chi);
        out.eps_sigma.push(eps_sigma);
        out.rho_c1.push(rho_c1);
        out.rho_c2.push(rho_c2);
    }
    Ok(out)
}

/// Flags of the one-step admissibility conditions of the general graph
/// transform theorem, per step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepConditions {
    pub nonlinearity: Vec<bool>,
    pub radius: Vec<bool>,
    pub offset: Vec<bool>,
    pub tilt: Vec<bool>,
    pub slope: Vec<bool>,
    pub modulus: Vec<bool>,
}

impl StepConditions {
    pub fn all_ok(&self) -> bool {
        self.nonlinearity.iter().all(|&b| b)
            && self.radius.iter().all(|&b| b)
            && self.offset.iter().all(|&b| b)
            && self.tilt.iter().all(|&b| b)
            && self.slope.iter().all(|&b| b)
            && self.modulus.iter().all(|&b| b)
    }

    pub fn step_ok(&self, n: usize) -> bool {
        self.nonlinearity[n]
            && self.radius[n]
            && self.offset[n]
            && self.tilt[n]
            && self.slope[n]
            && self.modulus[n]
    }
}

const FLAG_TOL: f64 = 1e-9;

fn leq(a: f64, b: f64) -> bool {
    a <= b + FLAG_TOL * a.abs().max(b.abs()).max(1e-300)
}

/// Evaluate the one-step conditions that make the graph transform
/// well-defined, using the derived rates directly.
pub fn step_conditions(
    lin: &[LinearData],
    params: &ParamSeq,
    rates: &DerivedRates,
) -> StepConditions {
    let alpha = params.alpha;
    let n_steps = lin.len();
    let mut out = StepConditions {
        nonlinearity: Vec::with_capacity(n_steps),
        radius: Vec::with_capacity(n_steps),
        offset: Vec::with_capacity(n_steps),
        tilt: Vec::with_capacity(n_steps),
        slope: Vec::with_capacity(n_steps),
        modulus: Vec::with_capacity(n_steps),
    };
    for n in 0..n_steps {
        let e_hat_u = rates.lambda_hat_u[n].exp();
        out.nonlinearity
            .push(rates.eps_f[n] < lin[n].lambda_u.exp() / (1.0 + params.gamma[n]));
        out.radius
            .push(leq(params.r[n + 1], e_hat_u * params.r[n] - rates.eps_f[n] * params.tau[n]));
        out.offset
            .push(leq(rates.lambda_check_s[n].exp() * params.tau[n], params.tau[n + 1]));
        out.tilt.push(leq(
            (lin[n].lambda_s - rates.lambda_hat_u[n]).exp() * params.sigma[n] + rates.eps_sigma[n],
            params.sigma[n + 1],
        ));
        let slope_a = (rates.lambda_hat_s[n] - rates.lambda_hat_u[n]).exp() * params.gamma[n];
        let slope_b = params.sigma[n + 1] + params.kappa[n + 1] * params.r[n + 1].powf(alpha);
        out.slope.push(leq(slope_a.min(slope_b), params.gamma[n + 1]));
        // modulus condition at the worst t = r_n after dividing by t^alpha
        let lhs = (lin[n].lambda_s - rates.lambda_hat_u[n]).exp() * params.kappa[n]
            + rates.rho_c1[n]
            + rates.rho_c2[n] * params.r[n].powf(alpha);
        out.modulus
            .push(leq(lhs, params.kappa[n + 1] * e_hat_u.powf(alpha)));
    }
    out
}

/// Per-condition flags of the recursive relations and bounds, with the first
/// failing index of each condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub rec_r: Vec<bool>,
    pub rec_t: Vec<bool>,
    pub rec_s: Vec<bool>,
    pub rec_k: Vec<bool>,
    pub bd_r: Vec<bool>,
    pub bd_b: Vec<bool>,
    pub bd_t: Vec<bool>,
    pub bd_k: Vec<bool>,
    pub bd_s: Vec<bool>,
    pub delta: f64,
    pub xi: f64,
    pub gamma_bar: f64,
}

impl ConditionReport {
    pub fn all_ok(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn step_ok(&self, n: usize) -> bool {
        self.rec_r[n]
            && self.rec_t[n]
            && self.rec_s[n]
            && self.rec_k[n]
            && self.bd_r[n]
            && self.bd_b[n]
            && self.bd_t[n]
            && self.bd_k[n]
            && self.bd_s[n]
    }

    /// First failing (condition name, index).
    pub fn first_failure(&self) -> Option<(&'static str, usize)> {
        let scan = |name: &'static str, v: &[bool]| {
            v.iter().position(|&b| !b).map(|i| (name, i))
        };
        scan("rec_r", &self.rec_r)
            .or_else(|| scan("rec_t", &self.rec_t))
            .or_else(|| scan("rec_s", &self.rec_s))
            .or_else(|| scan("rec_k", &self.rec_k))
            .or_else(|| scan("bd_r", &self.bd_r))
            .or_else(|| scan("bd_b", &self.bd_b))
            .or_else(|| scan("bd_t", &self.bd_t))
            .or_else(|| scan("bd_k", &self.bd_k))
            .or_else(|| scan("bd_s", &self.bd_s))
    }

    /// Bitfield of the nine condition flags at step n (for CSV export).
    pub fn flag_bits(&self, n: usize) -> u16 {
        let flags = [
            self.rec_r[n],
            self.rec_t[n],
            self.rec_s[n],
            self.rec_k[n],
            self.bd_r[n],
            self.bd_b[n],
            self.bd_t[n],
            self.bd_k[n],
            self.bd_s[n],
        ];
        flags.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u16) << i))
    }
}

/// Check the recursive relations (per step) and bounds (per state) on a
/// parameter sequence against linear data.
pub fn check_parameter_conditions(
    lin: &[LinearData],
    params: &ParamSeq,
    alpha: f64,
    delta: f64,
    xi: f64,
    gamma_bar: f64,
) -> ConditionReport {
    let n_steps = lin.len();
    let mut rep = ConditionReport {
        rec_r: Vec::with_capacity(n_steps),
        rec_t: Vec::with_capacity(n_steps),
        rec_s: Vec::with_capacity(n_steps),
        rec_k: Vec::with_capacity(n_steps),
        bd_r: Vec::with_capacity(n_steps),
        bd_b: Vec::with_capacity(n_steps),
        bd_t: Vec::with_capacity(n_steps),
        bd_k: Vec::with_capacity(n_steps),
        bd_s: Vec::with_capacity(n_steps),
        delta,
        xi,
        gamma_bar,
    };
    for (n, l) in lin.iter().enumerate() {
        rep.rec_r.push(leq(params.r[n + 1], (l.lambda_u - delta).exp() * params.r[n]));
        rep.rec_t.push(leq((l.lambda_s + delta).exp() * params.tau[n], params.tau[n + 1]));
        rep.rec_s
            .push(leq((l.lambda_s - l.lambda_u + delta).exp() * params.sigma[n], params.sigma[n + 1]));
        rep.rec_k.push(leq(
            (l.lambda_s - (1.0 + alpha) * l.lambda_u + delta).exp() * params.kappa[n],
            params.kappa[n + 1],
        ));
        rep.bd_r.push(leq(l.beta * params.r[n].powf(alpha), xi));
        rep.bd_b.push(leq(l.beta, xi * params.kappa[n]));
        rep.bd_t.push(leq(params.tau[n], params.r[n]));
        rep.bd_k.push(leq(params.kappa[n] * params.tau[n].powf(alpha), params.sigma[n]));
        rep.bd_s.push(leq(params.sigma[n] + params.kappa[n] * params.r[n].powf(alpha), gamma_bar));
    }
    rep
}

/// Search the scale constants (xi, gamma_bar) by halving from 0.1 until the
/// derived-inequality chain behind the parameter theorem holds on the
/// window. The margins use zeta = delta / (2 (2 + alpha)).
pub fn fit_xi_gamma(lin: &[LinearData], alpha: f64, delta: f64, rate_bound: f64) -> Result<(f64, f64)> {
    let zeta = delta / (2.0 * (2.0 + alpha));
    let l1 = (rate_bound + zeta).exp();
    let min_eu = lin.iter().map(|l| l.lambda_u.exp()).fold(f64::INFINITY, f64::min);
    let finite_s: Vec<&LinearData> =
        lin.iter().filter(|l| l.lambda_s != f64::NEG_INFINITY).collect();
    let min_es = finite_s.iter().map(|l| l.lambda_s.exp()).fold(f64::INFINITY, f64::min);
    let min_gap = finite_s
        .iter()
        .map(|l| (l.lambda_s - l.lambda_u).exp())
        .fold(f64::INFINITY, f64::min);
    let has_stable = !finite_s.is_empty();

    let mut gamma_bar: f64 = 0.1;
    let mut halvings = 0;
    while ((1.0 - gamma_bar) / (1.0 + gamma_bar)).ln() < -zeta {
        gamma_bar *= 0.5;
        halvings += 1;
        if halvings > 200 {
            return Err(Error::Config("gamma_bar search failed to converge".into()));
        }
    }

    let ok = |xi: f64| {
        let c1 = 3.0 * xi < min_eu / (1.0 + gamma_bar);
        let c2 = lin.iter().all(|l| l.lambda_u.exp() - 6.0 * xi >= (l.lambda_u - zeta).exp());
        let c6 = lin
            .iter()
            .all(|l| (l.lambda_u - zeta).exp() - 3.0 * xi >= (l.lambda_u - delta).exp());
        let (c4, c5, c7) = if has_stable {
            let c4 = (1.0 + l1 * gamma_bar) * 3.0 * xi
                + (1.0 + gamma_bar) * l1 * (3.0 * xi).powi(2)
                <= (zeta.exp() - 1.0) * min_es;
            let c5 = l1 * (1.0 + l1 * gamma_bar) * xi + l1 * l1 * xi * xi
                <= ((2.0 * zeta).exp() - zeta.exp()) * min_gap;
            let l2 = l1.powf(1.0 + alpha) * 3.0_f64.powf(alpha)
                + l1 * (1.0 + gamma_bar) * (1.0 + 3.0 * l1 * xi * (1.0 + gamma_bar)).powf(alpha);
            let c7 = l2 * xi.powf(alpha) <= (delta.exp() - zeta.exp()) * min_gap;
            (c4, c5, c7)
        } else {
            (true, true, true)
        };
        c1 && c2 && c4 && c5 && c6 && c7
    };

    let mut xi: f64 = 0.1;
    let mut halvings = 0;
    while !ok(xi) {
        xi *= 0.5;
        halvings += 1;
        if halvings > 500 {
            return Err(Error::Config("xi search failed to converge".into()));
        }
    }
    Ok((xi, gamma_bar))
}

/// Rate window for the effective-rate parameter construction; orderings
/// chi_hat_u > chi_bar_u > 0 > chi_bar_s > chi_hat_s are required.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateWindow {
    pub chi_hat_u: f64,
    pub chi_bar_u: f64,
    pub chi_hat_s: f64,
    pub chi_bar_s: f64,
}

impl RateWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi_hat_u > self.chi_bar_u && self.chi_bar_u > 0.0) {
            return Err(Error::Config(format!(
                "need chi_hat_u > chi_bar_u > 0, got {} / {}",
                self.chi_hat_u, self.chi_bar_u
            )));
        }
        if !(self.chi_hat_s < self.chi_bar_s && self.chi_bar_s < 0.0) {
            return Err(Error::Config(format!(
                "need chi_hat_s < chi_bar_s < 0, got {} / {}",
                self.chi_hat_s, self.chi_bar_s
            )));
        }
        Ok(())
    }
}

/// Seed magnitudes for the parameter construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Seeds {
    pub r_bar: f64,
    pub tau_bar: f64,
    pub sigma_bar: f64,
    pub kappa_bar: f64,
    #[serde(default)]
    pub kappa_hat: Option<f64>,
    #[serde(default)]
    pub gamma_bar: Option<f64>,
    #[serde(default)]
    pub xi: Option<f64>,
}

/// Extra verification flags recorded by `build_params`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildChecks {
    /// c_n >= e^{-M_n} for the detection-rate constants.
    pub scale_above_nonuniformity: bool,
    /// sin(theta_{n+1}) >= c_{n+1}^alpha / beta_bar wherever the angle is known.
    pub angle_bound: bool,
    /// kappa_hat <= kappa_bar e^{alpha n chi_bar_u} per state.
    pub kappa_hat_window: Vec<bool>,
    pub m_u: Vec<f64>,
    pub m0_s: f64,
    pub delta: f64,
    pub delta_prime: f64,
    /// Margin at which the recursions were validated (delta / 2).
    pub validation_delta: f64,
}

/// Build class parameters over a window from its effective series: radii
/// scale with the running effective-rate drawdown, curvature bounds scale
/// inversely, offsets follow the stable rates. Validates the seed
/// inequalities and the recursive conditions before returning.
pub fn build_params(
    lin: &[LinearData],
    series: &EffectiveSeries,
    rates: &RateWindow,
    seeds: &Seeds,
    rate_bound: f64,
) -> Result<(ParamSeq, BuildChecks)> {
    rates.validate()?;
    let n_steps = lin.len();
    if series.len() != n_steps {
        return Err(Error::Config("series/linear data length mismatch".into()));
    }
    let alpha = series.alpha;
    let delta = (rates.chi_hat_u - rates.chi_bar_u).min(rates.chi_bar_s - rates.chi_hat_s);
    let delta_prime = delta / (2.0 * alpha);
    if delta_prime >= rates.chi_hat_u {
        return Err(Error::SeedTooLarge(format!(
            "delta' = {delta_prime} must stay below chi_hat_u = {}",
            rates.chi_hat_u
        )));
    }
    if lin[0].beta > series.beta_bar {
        return Err(Error::PreconditionViolated(format!(
            "beta_0 = {} exceeds the threshold {}",
            lin[0].beta, series.beta_bar
        )));
    }
    let (xi, gamma_bar) = match (seeds.xi, seeds.gamma_bar) {
        (Some(x), Some(g)) => (x, g),
        _ => {
            let (x, g) = fit_xi_gamma(lin, alpha, delta, rate_bound)?;
            (seeds.xi.unwrap_or(x), seeds.gamma_bar.unwrap_or(g))
        }
    };

    let kappa_hat_default = seeds.kappa_bar * (alpha * n_steps as f64 * rates.chi_bar_u).exp();
    let kappa_hat = seeds.kappa_hat.unwrap_or(kappa_hat_default);
    // seed inequalities
    if seeds.tau_bar > seeds.r_bar {
        return Err(Error::SeedTooLarge("tau_bar > r_bar".into()));
    }
    if kappa_hat * seeds.tau_bar > seeds.sigma_bar {
        return Err(Error::SeedTooLarge("kappa_hat * tau_bar > sigma_bar".into()));
    }
    if seeds.sigma_bar + kappa_hat * seeds.r_bar.powf(alpha) > gamma_bar {
        return Err(Error::SeedTooLarge(
            "sigma_bar + kappa_hat r_bar^alpha exceeds gamma_bar".into(),
        ));
    }
    let l_prime = series.l_prime;
    if l_prime.exp() * series.beta_bar * seeds.r_bar.powf(alpha) > xi {
        return Err(Error::SeedTooLarge(format!(
            "e^(L') beta_bar r_bar^alpha > xi = {xi}; shrink r_bar"
        )));
    }
    if l_prime.exp() * series.beta_bar > xi * seeds.kappa_bar {
        return Err(Error::SeedTooLarge(format!(
            "e^(L') beta_bar > xi kappa_bar with xi = {xi}; grow kappa_bar"
        )));
    }

    // scale factors from the effective-rate drawdown
    let mut c = Vec::with_capacity(n_steps + 1);
    c.push(1.0_f64);
    for &le in &series.lambda_e {
        let prev = *c.last().unwrap();
        c.push(((le - delta_prime).exp() * prev).min(1.0));
    }
    let mut c_hat = Vec::with_capacity(n_steps + 1);
    c_hat.push((seeds.kappa_bar / kappa_hat).powf(1.0 / alpha));
    for &le in &series.lambda_e {
        let prev = *c_hat.last().unwrap();
        c_hat.push(((le - delta_prime).exp() * prev).min(1.0));
    }

    let m_u = nonuniformity_sequence(&series.lambda_e, rates.chi_hat_u);
    // minimal M_0^s with the stable sums below n chi_hat_s - M_n + M_0^s
    let mut m0_s: f64 = 0.0;
    let mut stable_sum = 0.0;
    for n in 0..=n_steps {
        m0_s = m0_s.max(stable_sum - n as f64 * rates.chi_hat_s + m_u[n]);
        if n < n_steps {
            stable_sum += lin[n].lambda_s;
        }
    }

    let r: Vec<f64> = c.iter().map(|&cn| seeds.r_bar * cn).collect();
    let kappa: Vec<f64> = c_hat.iter().map(|&cn| seeds.kappa_bar * cn.powf(-alpha)).collect();
    let mut tau = Vec::with_capacity(n_steps + 1);
    let mut s_acc: f64 = 0.0;
    for n in 0..=n_steps {
        tau.push(seeds.tau_bar * (-m0_s).exp() * s_acc.exp());
        if n < n_steps {
            s_acc += lin[n].lambda_s + delta_prime;
        }
    }
    let sigma: Vec<f64> = (0..=n_steps)
        .map(|n| kappa_hat * c[n].powf(-alpha) * tau[n].powf(alpha))
        .collect();
    let gamma = vec![gamma_bar; n_steps + 1];

    let scale_above_nonuniformity =
        c.iter().zip(&m_u).all(|(&cn, &m)| cn >= (-m).exp() * (1.0 - 1e-9));
    let angle_bound = (0..n_steps.saturating_sub(1)).all(|n| {
        lin[n + 1].theta.sin() >= c[n + 1].powf(alpha) / series.beta_bar * (1.0 - 1e-9)
    });
    let kappa_hat_window: Vec<bool> = (0..=n_steps)
        .map(|n| kappa_hat <= seeds.kappa_bar * (alpha * n as f64 * rates.chi_bar_u).exp() * (1.0 + 1e-9))
        .collect();

    let validation_delta = delta / 2.0;
    let mut params = ParamSeq {
        r,
        tau,
        sigma,
        kappa,
        gamma,
        alpha,
        delta,
        xi,
        gamma_bar,
        c: Some(c),
        validity: None,
    };
    let report = check_parameter_conditions(lin, &params, alpha, validation_delta, xi, gamma_bar);
    if let Some((name, idx)) = report.first_failure() {
        return Err(Error::SeedTooLarge(format!(
            "built parameters fail condition {name} at index {idx}"
        )));
    }
    params.validity = Some(report);
    if !scale_above_nonuniformity {
        return Err(Error::SeedTooLarge("scale factors dip below e^(-M_n)".into()));
    }
    let checks = BuildChecks {
        scale_above_nonuniformity,
        angle_bound,
        kappa_hat_window,
        m_u,
        m0_s,
        delta,
        delta_prime,
        validation_delta,
    };
    Ok((params, checks))
}

/// Suggest seed magnitudes that satisfy the seed inequalities for a window:
/// kappa_bar just above the scale forced by the Hölder threshold, r_bar just
/// below what the slope budget allows, offsets zero.
pub fn suggest_seeds(
    lin: &[LinearData],
    series: &EffectiveSeries,
    rates: &RateWindow,
    rate_bound: f64,
) -> Result<Seeds> {
    rates.validate()?;
    let alpha = series.alpha;
    let delta = (rates.chi_hat_u - rates.chi_bar_u).min(rates.chi_bar_s - rates.chi_hat_s);
    let (xi, gamma_bar) = fit_xi_gamma(lin, alpha, delta, rate_bound)?;
    let kappa_bar = (series.l_prime.exp() * series.beta_bar / xi) * 1.05;
    let n = lin.len() as f64;
    let kappa_hat = kappa_bar * (alpha * n * rates.chi_bar_u).exp();
    let from_xi = (xi / (series.l_prime.exp() * series.beta_bar)).powf(1.0 / alpha);
    let from_gamma = ((gamma_bar * 0.9) / kappa_hat).powf(1.0 / alpha);
    let r_bar = from_xi.min(from_gamma) * 0.9;
    Ok(Seeds {
        r_bar,
        tau_bar: 0.0,
        sigma_bar: 0.0,
        kappa_bar,
        kappa_hat: None,
        gamma_bar: Some(gamma_bar),
        xi: Some(xi),
    })
}

/// Radius of the initial-data window that fully determines the transformed
/// graph at step n: the pulled-back radius plus the offset contributions.
pub fn determination_radius(lin: &[LinearData], params: &ParamSeq, n: usize) -> f64 {
    let delta = params.delta;
    let mut pullback: f64 = 0.0; // sum of (-lambda_u + delta) up to k
    let mut tail = 0.0;
    for (k, l) in lin.iter().take(n).enumerate() {
        tail += pullback.exp() * params.tau[k];
        pullback += -l.lambda_u + delta;
    }
    pullback.exp() * params.r[n] + 3.0 * params.xi * tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::effective_series;
    use approx::assert_relative_eq;

    fn lin(lambda_u: f64, lambda_s: f64, beta: f64) -> LinearData {
        LinearData { lambda_u, lambda_s, theta: std::f64::consts::FRAC_PI_2, beta }
    }

    #[test]
    fn derived_rates_of_linear_germ() {
        // with a zero nonlinearity modulus all corrections vanish and the
        // expansion exponent only pays the slope penalty
        let data = vec![lin(2.0_f64.ln(), -(2.0_f64.ln()), 1.0); 2];
        let params = ParamSeq::uniform(2, 0.5, 1.0, 0.05, 1.0, 0.0);
        let zeros = vec![0.0; 2];
        let r = derived_rates(&data, &params, Some(&zeros), None).unwrap();
        assert_relative_eq!(r.lambda_hat_u[0], 2.0_f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(r.lambda_check_s[0], -(2.0_f64.ln()), epsilon = 1e-14);
        assert_relative_eq!(r.chi[0], 2.0_f64.ln() - (1.05_f64).ln(), epsilon = 1e-14);
        assert_eq!(r.eps_sigma[0], 0.0);
    }

    #[test]
    fn derived_rates_hand_example() {
        // beta = 2, tau = 0, r = 0.1, gamma = 0.05, alpha = 1, lambda_u = log 2
        let data = vec![lin(2.0_f64.ln(), -(2.0_f64.ln()), 2.0)];
        let mut params = ParamSeq::uniform(1, 0.1, 1.0, 0.05, 1.0, 0.0);
        params.r = vec![0.1, 0.1];
        let r = derived_rates(&data, &params, None, None).unwrap();
        assert_relative_eq!(r.eps_f[0], 0.21, epsilon = 1e-14);
        assert_relative_eq!(r.lambda_hat_u[0].exp(), 2.0 - 1.05 * 0.21, epsilon = 1e-14);
    }

    #[test]
    fn derived_rates_zero_tau_kills_eps_sigma() {
        let data = vec![lin(0.7, -0.7, 2.0)];
        let params = ParamSeq::uniform(1, 0.05, 1.0, 0.1, 1.0, 0.0);
        let r = derived_rates(&data, &params, None, None).unwrap();
        assert_eq!(r.eps_sigma[0], 0.0);
    }

    #[test]
    fn rate_overflow_when_radius_is_too_big() {
        let data = vec![lin(0.1, -0.7, 5.0)];
        let params = ParamSeq::uniform(1, 1.0, 1.0, 0.5, 1.0, 0.0);
        match derived_rates(&data, &params, None, None) {
            Err(Error::RateOverflow { at, .. }) => assert_eq!(at, 0),
            other => panic!("expected RateOverflow, got {other:?}"),
        }
    }

    #[test]
    fn recursion_at_equality_passes_all_flags() {
        let data = vec![lin(0.6, -0.5, 1.0); 4];
        let delta = 0.1;
        let n = data.len();
        let mut params = ParamSeq::uniform(n, 0.0, 0.0, 0.3, 1.0, delta);
        params.r[0] = 1e-5;
        params.tau[0] = 1e-6;
        params.sigma[0] = 0.05;
        params.kappa[0] = 3000.0;
        for k in 0..n {
            params.r[k + 1] = (data[k].lambda_u - delta).exp() * params.r[k];
            params.tau[k + 1] = (data[k].lambda_s + delta).exp() * params.tau[k];
            params.sigma[k + 1] =
                (data[k].lambda_s - data[k].lambda_u + delta).exp() * params.sigma[k];
            params.kappa[k + 1] =
                (data[k].lambda_s - 2.0 * data[k].lambda_u + delta).exp() * params.kappa[k];
        }
        let rep = check_parameter_conditions(&data, &params, 1.0, delta, 0.25, 0.5);
        assert!(rep.all_ok(), "first failure: {:?}", rep.first_failure());
    }

    #[test]
    fn exact_linear_evolution_passes_without_margin() {
        // with delta = 0 the recursions at equality are fixed points of the
        // exact linear evolution
        let data = vec![lin(2.0_f64.ln(), -(2.0_f64.ln()), 1.0); 5];
        let n = data.len();
        let mut params = ParamSeq::uniform(n, 0.0, 0.0, 0.5, 1.0, 0.0);
        params.r[0] = 0.1;
        params.kappa[0] = 10.0;
        params.tau[0] = 0.001;
        params.sigma[0] = 0.05;
        for k in 0..n {
            params.r[k + 1] = data[k].lambda_u.exp() * params.r[k];
            params.tau[k + 1] = data[k].lambda_s.exp() * params.tau[k];
            params.sigma[k + 1] = (data[k].lambda_s - data[k].lambda_u).exp() * params.sigma[k];
            params.kappa[k + 1] =
                (data[k].lambda_s - 2.0 * data[k].lambda_u).exp() * params.kappa[k];
        }
        for delta in [0.0, 0.05, 0.2] {
            let rep = check_parameter_conditions(&data, &params, 1.0, 0.0, 1e9, 1e9);
            assert!(rep.all_ok(), "delta = {delta}");
        }
    }

    #[test]
    fn violations_flag_the_right_conditions() {
        let data = vec![lin(0.6, -0.5, 1.0); 2];
        let mut params = ParamSeq::uniform(2, 0.01, 20.0, 0.5, 1.0, 0.1);
        params.tau = vec![0.02, 0.02, 0.02]; // tau > r
        let rep = check_parameter_conditions(&data, &params, 1.0, 0.1, 1.0, 10.0);
        assert!(!rep.bd_t[0]);
        let mut params2 = ParamSeq::uniform(2, 0.01, 20.0, 0.5, 1.0, 0.1);
        params2.tau = vec![0.005, 0.005, 0.005];
        params2.sigma = vec![0.01, 0.01, 0.01]; // kappa tau^alpha = 0.1 > sigma
        let rep = check_parameter_conditions(&data, &params2, 1.0, 0.1, 1.0, 10.0);
        assert!(!rep.bd_k[0]);
    }

    #[test]
    fn scale_recursion_hand_example() {
        let lambda_e = [1.0, -1.0, 1.0];
        let data = vec![lin(1.2, -1.2, 1.0); 3];
        let series = effective_series(
            &{
                let mut d = data.clone();
                d[0].lambda_u = 1.0;
                d[1].lambda_u = -1.0;
                d[2].lambda_u = 1.0;
                d
            },
            1.0,
            10.0,
            1.5,
        )
        .unwrap();
        assert_eq!(series.lambda_e, lambda_e);
        // delta' = 0.1 comes from chi_hat_u - chi_bar_u = 0.2 with alpha = 1
        let rates = RateWindow { chi_hat_u: 0.5, chi_bar_u: 0.3, chi_hat_s: -0.5, chi_bar_s: -0.3 };
        let delta = 0.2_f64;
        assert_relative_eq!(delta / 2.0, 0.1);
        let mut c = vec![1.0_f64];
        for &le in &series.lambda_e {
            c.push(((le - 0.1).exp() * c.last().unwrap()).min(1.0));
        }
        assert_relative_eq!(c[1], 1.0);
        assert_relative_eq!(c[2], (-1.1_f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(c[3], (-0.2_f64).exp(), epsilon = 1e-14);
        let _ = rates;
    }

    #[test]
    fn build_params_constant_good_rates_keep_full_radius() {
        let data = vec![lin(0.7, -0.7, 1.0); 6];
        let series = effective_series(&data, 1.0, 10.0, 0.8).unwrap();
        let rates = RateWindow { chi_hat_u: 0.5, chi_bar_u: 0.45, chi_hat_s: -0.5, chi_bar_s: -0.45 };
        let seeds = pick_seeds(&data, &series, &rates, 0.8);
        let (params, checks) = build_params(&data, &series, &rates, &seeds, 0.8).unwrap();
        // min never binds: c = 1 throughout
        assert!(params.c.as_ref().unwrap().iter().all(|&c| c == 1.0));
        assert!(params.r.iter().all(|&r| (r - seeds.r_bar).abs() < 1e-15));
        assert!(checks.scale_above_nonuniformity);
        assert!(params.validity.as_ref().unwrap().all_ok());
    }

    fn pick_seeds(
        lin: &[LinearData],
        series: &EffectiveSeries,
        rates: &RateWindow,
        rate_bound: f64,
    ) -> Seeds {
        suggest_seeds(lin, series, rates, rate_bound).unwrap()
    }

    #[test]
    fn build_params_scales_track_nonuniformity() {
        // random-ish effective sequence: c_n >= e^{-M_n}
        let mut data = Vec::new();
        let pat = [0.9, 0.4, -0.3, 0.8, 0.6, -0.1, 0.7, 0.5];
        for i in 0..16 {
            data.push(lin(pat[i % pat.len()], -0.9, 1.0));
        }
        let series = effective_series(&data, 1.0, 10.0, 1.0).unwrap();
        let rates = RateWindow { chi_hat_u: 0.3, chi_bar_u: 0.2, chi_hat_s: -0.6, chi_bar_s: -0.5 };
        let seeds = pick_seeds(&data, &series, &rates, 1.0);
        let (params, checks) = build_params(&data, &series, &rates, &seeds, 1.0).unwrap();
        let c = params.c.as_ref().unwrap();
        for (n, &m) in checks.m_u.iter().enumerate() {
            assert!(c[n] >= (-m).exp() * (1.0 - 1e-12), "n = {n}");
        }
        assert!(params.validity.as_ref().unwrap().all_ok());
    }

    #[test]
    fn build_params_rejects_oversized_seeds() {
        let data = vec![lin(0.7, -0.7, 1.0); 4];
        let series = effective_series(&data, 1.0, 10.0, 0.8).unwrap();
        let rates = RateWindow { chi_hat_u: 0.5, chi_bar_u: 0.45, chi_hat_s: -0.5, chi_bar_s: -0.45 };
        let mut seeds = pick_seeds(&data, &series, &rates, 0.8);
        seeds.r_bar = 10.0;
        assert!(matches!(
            build_params(&data, &series, &rates, &seeds, 0.8),
            Err(Error::SeedTooLarge(_))
        ));
    }

    #[test]
    fn determination_radius_examples() {
        // with tau = 0 only the pullback term survives; n = 0 is the radius
        let data = vec![lin(2.0_f64.ln(), -(2.0_f64.ln()), 1.0); 3];
        let mut params = ParamSeq::uniform(3, 0.2, 1.0, 0.1, 1.0, 0.1);
        params.xi = 0.05;
        assert_relative_eq!(determination_radius(&data, &params, 0), 0.2, epsilon = 1e-15);
        let expect = ((-2.0 * (2.0_f64.ln() - 0.1)).exp()) * 0.2;
        assert_relative_eq!(determination_radius(&data, &params, 2), expect, epsilon = 1e-14);
        // two-term evaluation with decaying offsets
        params.tau = vec![0.01, 0.005, 0.0025, 0.00125];
        let pull = |k: usize| (-(2.0_f64.ln() - 0.1) * k as f64).exp();
        let expect = pull(2) * 0.2 + 3.0 * 0.05 * (pull(0) * 0.01 + pull(1) * 0.005);
        assert_relative_eq!(determination_radius(&data, &params, 2), expect, epsilon = 1e-14);
    }

    #[test]
    fn monotonicity_in_beta() {
        // worse nonlinearity never helps the derived rates
        let mut last_hat_u = f64::INFINITY;
        let mut last_check_s = 0.0;
        for beta in [1.0, 2.0, 4.0, 8.0] {
            let data = vec![lin(2.0_f64.ln(), -(2.0_f64.ln()), beta)];
            let params = ParamSeq::uniform(1, 0.05, 1.0, 0.05, 1.0, 0.0);
            let r = derived_rates(&data, &params, None, None).unwrap();
            assert!(r.lambda_hat_u[0].exp() <= last_hat_u);
            assert!(r.lambda_check_s[0] >= last_check_s || last_check_s == 0.0);
            last_hat_u = r.lambda_hat_u[0].exp();
            last_check_s = r.lambda_check_s[0];
        }
    }
}
