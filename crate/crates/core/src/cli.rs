//! Batch command layer: a JSON run configuration drives the diagnostics,
//! growth, unstable-manifold, and closing pipelines with file outputs.
//! Identical configurations produce byte-identical outputs (all sampling is
//! seeded, iteration orders are fixed).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admissible::AdmissibleManifold;
use crate::catalog::{self, AmbientMap, System};
use crate::closing::{check_segment, close_orbit, ClosingSeeds};
use crate::descriptor::{self, SystemDescriptor};
use crate::diagnostics::{
    beta_density_report, effective_hyperbolic_times, effective_report, effective_series,
    nonuniformity_sequence, prefix_average_extremum, top_lyapunov_exponent, BetaDensityReport,
    EffectiveReport, EffectiveSeries,
};
use crate::error::{Error, Result};
use crate::germ::{extract_linear_data, ExtractOptions, LinearData};
use crate::rates::{build_params, RateWindow, Seeds};
use crate::report as files;
use crate::transform::{
    push, solve_unstable_family, TransformCtx, TransformOptions, UnstableOptions, UnstableParams,
};

/// Rate block of a run configuration; orderings are checked at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatesConfig {
    pub chi_hat_u: f64,
    pub chi_bar_u: f64,
    pub chi_hat_s: f64,
    pub chi_bar_s: f64,
    #[serde(default)]
    pub chi_hat: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl RatesConfig {
    pub fn window(&self) -> RateWindow {
        RateWindow {
            chi_hat_u: self.chi_hat_u,
            chi_bar_u: self.chi_bar_u,
            chi_hat_s: self.chi_hat_s,
            chi_bar_s: self.chi_bar_s,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ThresholdsConfig {
    #[serde(default)]
    pub beta_bar: Option<f64>,
    #[serde(default)]
    pub theta_bar: Option<f64>,
}

/// Where the system comes from: a descriptor file path or an inline
/// descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Path(String),
    Inline(SystemDescriptor),
}

/// Run configuration consumed by every subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSource,
    pub window: usize,
    #[serde(default)]
    pub rates: Option<RatesConfig>,
    #[serde(default)]
    pub thresholds: ThresholdsConfig,
    #[serde(default)]
    pub seeds: Option<Seeds>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub strict_class: bool,
    /// "uniform" (default) or "adaptive" window parameters for the backward
    /// solver.
    #[serde(default)]
    pub unstable_mode: Option<String>,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_str(&text)?;
        // relative descriptor paths resolve against the config location
        if let SystemSource::Path(p) = &cfg.system {
            let sys_path = PathBuf::from(p);
            if sys_path.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.system = SystemSource::Path(dir.join(sys_path).to_string_lossy().into());
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if let Some(r) = &self.rates {
            r.window().validate()?;
        }
        Ok(())
    }

    fn descriptor(&self) -> Result<SystemDescriptor> {
        match &self.system {
            SystemSource::Inline(d) => Ok(d.clone()),
            SystemSource::Path(p) => descriptor::parse(&std::fs::read_to_string(p)?),
        }
    }

    fn tol(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).cloned().unwrap_or(default)
    }

    fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            splitting_tol: self.tol("splitting_tol", crate::germ::SPLITTING_TOL),
            ..Default::default()
        }
    }

    fn transform_options(&self) -> TransformOptions {
        TransformOptions {
            newton_tol: self.tol("newton_tol", 1e-12),
            strict_class: self.strict_class,
            ..Default::default()
        }
    }

    fn require_rates(&self) -> Result<&RatesConfig> {
        self.rates
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs the rates block".into()))
    }

    fn require_seeds(&self) -> Result<&Seeds> {
        self.seeds
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs the seeds block".into()))
    }
}

/// Shared front of every pipeline: instantiate, extract, and diagnose.
pub struct Analysis {
    pub system: System,
    pub lin: Vec<LinearData>,
    pub series: EffectiveSeries,
    pub beta_report: BetaDensityReport,
    pub chi_hat: f64,
    pub m_seq: Vec<f64>,
    pub gamma: Vec<usize>,
    pub report: EffectiveReport,
}

pub fn analyze(cfg: &RunConfig) -> Result<Analysis> {
    let desc = cfg.descriptor()?;
    let system = descriptor::instantiate(&desc, cfg.window)?;
    let lin = extract_linear_data(&system.seq, &system.split, &cfg.extract_options())?;
    let rate_bound = system.seq.rate_bound();
    let beta_report = beta_density_report(&lin, desc.alpha, rate_bound)?;
    let beta_bar = cfg.thresholds.beta_bar.unwrap_or(beta_report.best.beta_bar);
    let series = effective_series(&lin, desc.alpha, beta_bar, rate_bound)?;
    let chi_e_est = prefix_average_extremum(&series.lambda_e, true);
    let chi_hat = cfg
        .rates
        .as_ref()
        .and_then(|r| r.chi_hat)
        .unwrap_or(0.5 * chi_e_est);
    let m_seq = nonuniformity_sequence(&series.lambda_e, chi_hat);
    let gamma = effective_hyperbolic_times(&series.lambda_e, chi_hat);
    let top = top_lyapunov_exponent(&system.seq, &DVector::zeros(system.seq.dim()), cfg.window)?;
    let report = effective_report(&lin, &series, chi_hat, rate_bound, Some(top));
    Ok(Analysis { system, lin, series, beta_report, chi_hat, m_seq, gamma, report })
}

/// Emit linear-data and effective-series CSVs plus the report JSON.
pub fn cmd_analyze(cfg: &RunConfig, out: &Path) -> Result<EffectiveReport> {
    let a = analyze(cfg)?;
    files::write_linear_data_csv(&out.join("linear_data.csv"), &a.lin)?;
    files::write_effective_series_csv(
        &out.join("effective_series.csv"),
        &a.series,
        &a.m_seq,
        &a.gamma,
    )?;
    files::write_json(&out.join("report.json"), &a.report)?;
    files::write_json(&out.join("beta_density.json"), &a.beta_report)?;
    Ok(a.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct EhtSummary {
    pub chi_hat: f64,
    pub gamma_count: usize,
    pub gamma_density: f64,
    pub density_lb: f64,
}

/// Emit the effective-hyperbolic-time set and non-uniformity constants.
pub fn cmd_eht(cfg: &RunConfig, out: &Path) -> Result<EhtSummary> {
    let a = analyze(cfg)?;
    files::write_gamma_csv(&out.join("gamma.csv"), &a.m_seq, &a.gamma)?;
    let summary = EhtSummary {
        chi_hat: a.chi_hat,
        gamma_count: a.gamma.len(),
        gamma_density: a.gamma.len() as f64 / a.series.len() as f64,
        density_lb: a.report.density_lb,
    };
    files::write_json(&out.join("eht.json"), &summary)?;
    Ok(summary)
}

/// Grow an admissible manifold through the window with parameters built from
/// the effective rates; dumps every step.
pub fn cmd_grow(cfg: &RunConfig, out: &Path, seed_manifold: Option<&Path>) -> Result<usize> {
    let a = analyze(cfg)?;
    let rates = cfg.require_rates()?.window();
    let seeds = cfg.require_seeds()?;
    let (params, _checks) = build_params(&a.lin, &a.series, &rates, seeds, a.system.seq.rate_bound())?;
    files::write_params_csv(&out.join("params.csv"), &params)?;
    let ctx = TransformCtx::new(
        &a.system.seq,
        &a.system.split,
        &a.lin,
        &params,
        cfg.transform_options(),
    )?;
    let m0 = match seed_manifold {
        Some(path) => {
            let m = AdmissibleManifold::from_json(&std::fs::read_to_string(path)?)?;
            if (m.radius() - params.r[0]).abs() > 1e-12 * params.r[0].max(1.0) {
                return Err(Error::Config(format!(
                    "seed manifold radius {} does not match the built r_0 = {}",
                    m.radius(),
                    params.r[0]
                )));
            }
            m
        }
        None => AdmissibleManifold::zero(
            a.system.split.u_dim(),
            a.system.split.s_dim(),
            crate::admissible::default_degree(a.system.split.u_dim()),
            ctx.class_at(0),
        ),
    };
    let (manifolds, reports) = push(&ctx, m0, 0, cfg.window as i64)?;
    for (i, m) in manifolds.iter().enumerate() {
        files::write_json(&out.join(format!("manifold_{i:04}.json")), &m.dump())?;
    }
    files::write_step_reports_csv(&out.join("transform_steps.csv"), &reports)?;
    Ok(manifolds.len())
}

/// Solve the backward fixed-point problem for the local unstable family.
pub fn cmd_unstable(cfg: &RunConfig, out: &Path) -> Result<crate::transform::UnstableSolveReport> {
    let desc = cfg.descriptor()?;
    let system = descriptor::instantiate(&desc, cfg.window)?;
    let n = cfg.window as i64;
    let seq = system.seq.rebase(-n);
    let split = system.split.rebase(-n);
    let lin = extract_linear_data(&seq, &split, &cfg.extract_options())?;
    let seeds = cfg.require_seeds()?;
    let mode = cfg.unstable_mode.as_deref().unwrap_or("uniform");
    let params = match mode {
        "uniform" => UnstableParams::Uniform {
            r: seeds.r_bar,
            kappa: seeds.kappa_bar,
            gamma: seeds.gamma_bar.unwrap_or(seeds.kappa_bar * seeds.r_bar + seeds.sigma_bar),
        },
        "adaptive" => {
            let rates = cfg.require_rates()?.window();
            let beta_bar = cfg
                .thresholds
                .beta_bar
                .unwrap_or_else(|| lin.iter().map(|l| l.beta).fold(1.0, f64::max) * 2.0);
            UnstableParams::Adaptive { rates, seeds: *seeds, beta_bar }
        }
        other => return Err(Error::Config(format!("unknown unstable_mode `{other}`"))),
    };
    let opts = UnstableOptions {
        params,
        tol: cfg.tol("solver_tol", 1e-9),
        window_start: 4,
        window_cap: 1024,
        transform: cfg.transform_options(),
    };
    let (family, report, from) = solve_unstable_family(&seq, &split, &lin, &opts)?;
    for (i, m) in family.iter().enumerate() {
        let idx = from + i as i64;
        files::write_json(&out.join(format!("unstable_{idx}.json")), &m.dump())?;
    }
    files::write_json(&out.join("unstable_report.json"), &report)?;
    Ok(report)
}

/// Segment descriptor consumed by the closing command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentDescriptor {
    /// Ambient system name; currently `cat_map`.
    pub system: String,
    pub initial_point: Vec<f64>,
    pub period: usize,
    #[serde(default)]
    pub theta_bar: Option<f64>,
    #[serde(default)]
    pub chart_half_width: Option<f64>,
    #[serde(default)]
    pub closing_seeds: Option<ClosingSeeds>,
}

fn ambient_by_name(name: &str) -> Result<AmbientMap> {
    match name {
        "cat_map" => Ok(AmbientMap::cat_map()),
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

/// Certify a segment and close it to a hyperbolic periodic point.
pub fn cmd_close(
    cfg: &RunConfig,
    out: &Path,
    segment_path: &Path,
) -> Result<crate::closing::PeriodicPointResult> {
    let seg_desc: SegmentDescriptor =
        serde_json::from_str(&std::fs::read_to_string(segment_path)?)?;
    let rates = cfg.require_rates()?;
    let map = ambient_by_name(&seg_desc.system)?;
    let d = map.dim;
    if seg_desc.initial_point.len() != d {
        return Err(Error::Config("initial point has wrong dimension".into()));
    }
    // generate the orbit by iteration (wrapped into [0,1) on the torus)
    let mut orbit = vec![DVector::from_vec(seg_desc.initial_point.clone())];
    for _ in 0..seg_desc.period {
        let mut next = (map.map)(orbit.last().unwrap());
        if map.torus {
            next = next.map(|t| t.rem_euclid(1.0));
        }
        orbit.push(next);
    }
    let frames = vec![DMatrix::identity(d, d); orbit.len()];
    let hw = seg_desc.chart_half_width.unwrap_or(0.2);
    let segment = catalog::segment_from_orbit(&map, &orbit, &frames, 1.0, hw)?;
    let theta_bar = seg_desc.theta_bar.or(cfg.thresholds.theta_bar).unwrap_or(0.1);
    let report = check_segment(&segment, rates.chi_hat_u, rates.chi_hat_s, theta_bar)?;
    files::write_json(&out.join("segment_report.json"), &report)?;
    let seeds = seg_desc.closing_seeds.unwrap_or_default();
    let result = close_orbit(&segment, &report, &seeds, rates.chi_bar_u, rates.chi_bar_s)?;
    files::write_json(&out.join("periodic_point.json"), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct CombinedReport {
    pub effective: EffectiveReport,
    pub eht: EhtSummary,
    pub beta_density: BetaDensityReport,
}

/// Run the full diagnostic pipeline and emit one combined report.
pub fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<CombinedReport> {
    let a = analyze(cfg)?;
    files::write_linear_data_csv(&out.join("linear_data.csv"), &a.lin)?;
    files::write_effective_series_csv(
        &out.join("effective_series.csv"),
        &a.series,
        &a.m_seq,
        &a.gamma,
    )?;
    files::write_gamma_csv(&out.join("gamma.csv"), &a.m_seq, &a.gamma)?;
    let combined = CombinedReport {
        eht: EhtSummary {
            chi_hat: a.chi_hat,
            gamma_count: a.gamma.len(),
            gamma_density: a.gamma.len() as f64 / a.series.len() as f64,
            density_lb: a.report.density_lb,
        },
        effective: a.report,
        beta_density: a.beta_report,
    };
    files::write_json(&out.join("report.json"), &combined)?;
    Ok(combined)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_text(system: &str, window: usize) -> String {
        format!(
            r#"{{
                "system": {{
                    "dimension": 2, "alpha": 1.0,
                    "maps": [{{"builtin": "{system}", "params": []}}],
                    "splitting": "builtin"
                }},
                "window": {window}
            }}"#
        )
    }

    #[test]
    fn rates_orderings_enforced_at_parse() {
        let bad = r#"{
            "system": {"dimension": 2, "alpha": 1.0,
                       "maps": [{"builtin": "diag_linear", "params": []}],
                       "splitting": "builtin"},
            "window": 4,
            "rates": {"chi_hat_u": 0.1, "chi_bar_u": 0.5, "chi_hat_s": -0.6, "chi_bar_s": -0.5}
        }"#;
        assert!(RunConfig::from_str(bad).is_err());
        let good = bad.replace("\"chi_hat_u\": 0.1", "\"chi_hat_u\": 0.6");
        assert!(RunConfig::from_str(&good).is_ok());
    }

    #[test]
    fn analyze_classifies_the_catalog_dichotomy() {
        let cfg = RunConfig::from_str(&config_text("alt_3_half", 64)).unwrap();
        let a = analyze(&cfg).unwrap();
        assert!(!a.report.effectively_hyperbolic);
        assert!(a.report.chi_e <= -(2.0_f64.ln()) + 1e-12);

        let cfg = RunConfig::from_str(&config_text("pliss_blocks", 256)).unwrap();
        let a = analyze(&cfg).unwrap();
        assert!(a.report.effectively_hyperbolic);
        assert!(a.report.chi_e > 0.3);

        let cfg = RunConfig::from_str(&config_text("diag_linear", 16)).unwrap();
        let a = analyze(&cfg).unwrap();
        assert!((a.report.chi_e - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_str(&config_text("quad_hyperbolic", 8)).unwrap();
        let out1 = tmp.path().join("a");
        let out2 = tmp.path().join("b");
        cmd_analyze(&cfg, &out1).unwrap();
        cmd_analyze(&cfg, &out2).unwrap();
        for name in ["linear_data.csv", "effective_series.csv", "report.json"] {
            let a = std::fs::read(out1.join(name)).unwrap();
            let b = std::fs::read(out2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}
