//! File export helpers: the CSV and JSON formats emitted by the command
//! layer. Floats are written with Rust's shortest-roundtrip formatting so
//! identical inputs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::EffectiveSeries;
use crate::error::Result;
use crate::germ::LinearData;
use crate::rates::ParamSeq;
use crate::transform::TransformStepReport;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

/// Columns: n, lambda_u, lambda_s, theta, beta.
pub fn linear_data_csv(lin: &[LinearData]) -> String {
    let mut out = String::from("n,lambda_u,lambda_s,theta,beta\n");
    for (n, l) in lin.iter().enumerate() {
        let _ = writeln!(out, "{n},{},{},{},{}", l.lambda_u, l.lambda_s, l.theta, l.beta);
    }
    out
}

pub fn write_linear_data_csv(path: &Path, lin: &[LinearData]) -> Result<()> {
    write_file(path, &linear_data_csv(lin))
}

/// Columns: n, delta, lambda_e, beta_flag, M_n, in_gamma. Row n carries the
/// running constants after n+1 steps.
pub fn effective_series_csv(series: &EffectiveSeries, m_seq: &[f64], gamma: &[usize]) -> String {
    let mut out = String::from("n,delta,lambda_e,beta_flag,M_n,in_gamma\n");
    for n in 0..series.len() {
        let in_gamma = gamma.binary_search(&(n + 1)).is_ok();
        let _ = writeln!(
            out,
            "{n},{},{},{},{},{}",
            series.delta[n],
            series.lambda_e[n],
            series.beta_flag[n] as u8,
            m_seq[n + 1],
            in_gamma as u8
        );
    }
    out
}

pub fn write_effective_series_csv(
    path: &Path,
    series: &EffectiveSeries,
    m_seq: &[f64],
    gamma: &[usize],
) -> Result<()> {
    write_file(path, &effective_series_csv(series, m_seq, gamma))
}

/// Columns: n, r, tau, sigma, kappa, gamma, c_n, flags (nine-bit condition
/// field per step; blank on the final state).
pub fn params_csv(params: &ParamSeq) -> String {
    let mut out = String::from("n,r,tau,sigma,kappa,gamma,c_n,flags\n");
    let steps = params.steps();
    for n in 0..=steps {
        let c = params.c.as_ref().map(|c| c[n]).unwrap_or(1.0);
        let flags = if n < steps {
            params
                .validity
                .as_ref()
                .map(|v| v.flag_bits(n).to_string())
                .unwrap_or_default()
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{n},{},{},{},{},{},{},{}",
            params.r[n], params.tau[n], params.sigma[n], params.kappa[n], params.gamma[n], c, flags
        );
    }
    out
}

pub fn write_params_csv(path: &Path, params: &ParamSeq) -> Result<()> {
    write_file(path, &params_csv(params))
}

/// Columns: n, r_in, r_out, newton_iters, residual, expansion_min,
/// domain_coverage, class_ok.
pub fn step_reports_csv(reports: &[TransformStepReport]) -> String {
    let mut out =
        String::from("n,r_in,r_out,newton_iters,residual,expansion_min,domain_coverage,class_ok\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.input_params.r,
            r.output_params.r,
            r.newton_iters,
            r.residual,
            r.expansion_min,
            r.domain_coverage,
            r.class_ok as u8
        );
    }
    out
}

pub fn write_step_reports_csv(path: &Path, reports: &[TransformStepReport]) -> Result<()> {
    write_file(path, &step_reports_csv(reports))
}

/// Columns: n, in_gamma, M_n (time-indexed, n = 1..=N).
pub fn gamma_csv(m_seq: &[f64], gamma: &[usize]) -> String {
    let mut out = String::from("n,in_gamma,M_n\n");
    for n in 1..m_seq.len() {
        let in_gamma = gamma.binary_search(&n).is_ok();
        let _ = writeln!(out, "{n},{},{}", in_gamma as u8, m_seq[n]);
    }
    out
}

pub fn write_gamma_csv(path: &Path, m_seq: &[f64], gamma: &[usize]) -> Result<()> {
    write_file(path, &gamma_csv(m_seq, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{effective_hyperbolic_times, effective_series, nonuniformity_sequence};

    #[test]
    fn csv_headers_and_rows() {
        let lin = vec![LinearData {
            lambda_u: 0.5,
            lambda_s: -0.5,
            theta: 1.5,
            beta: 1.0,
        }];
        let text = linear_data_csv(&lin);
        assert!(text.starts_with("n,lambda_u,lambda_s,theta,beta\n"));
        assert!(text.contains("0,0.5,-0.5,1.5,1"));

        let series = effective_series(&lin, 1.0, 10.0, 1.0).unwrap();
        let m = nonuniformity_sequence(&series.lambda_e, 0.2);
        let gamma = effective_hyperbolic_times(&series.lambda_e, 0.2);
        let text = effective_series_csv(&series, &m, &gamma);
        assert!(text.contains("0,0,0.5,0,0,1"));
    }

    #[test]
    fn neg_infinity_prints_parseably() {
        let lin = vec![LinearData {
            lambda_u: 0.5,
            lambda_s: f64::NEG_INFINITY,
            theta: 1.5,
            beta: 1.0,
        }];
        let text = linear_data_csv(&lin);
        assert!(text.contains("-inf"));
        assert_eq!("-inf".parse::<f64>().unwrap(), f64::NEG_INFINITY);
    }
}
