//! Run files: samples CSV, per-run metrics CSV and the `key=value` manifest.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file back gives the
//! exact values that were written and reruns with the same seed are byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::samplers::{ChainStats, SampleBatch};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn csv_error(path: &str, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

/// Samples as CSV: `chain,draw,failed,log_prior,log_posterior,x_0..x_{D-1}`.
pub fn samples_csv(batches: &[SampleBatch], dim: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["chain", "draw", "failed", "log_prior", "log_posterior"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("x_{i}")));
    w.write_record(&header)
        .map_err(|e| csv_error(SAMPLES_FILE, e))?;
    for b in batches {
        b.validate()?;
        for (i, x) in b.samples.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: x.len(),
                });
            }
            let mut row = vec![
                b.chain_id.to_string(),
                i.to_string(),
                u8::from(b.failed[i]).to_string(),
                b.log_prior[i].to_string(),
                b.log_posterior[i].to_string(),
            ];
            row.extend(x.iter().map(f64::to_string));
            w.write_record(&row)
                .map_err(|e| csv_error(SAMPLES_FILE, e))?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::parse(SAMPLES_FILE, e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is ASCII"))
}

/// Parses [`samples_csv`] output back into per-chain batches, in order of first
/// appearance. Wall times and sampler statistics are not stored and come back as zero.
pub fn parse_samples(text: &str) -> Result<Vec<SampleBatch>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_error(SAMPLES_FILE, e))?.clone();
    let fixed = ["chain", "draw", "failed", "log_prior", "log_posterior"];
    if header.len() < fixed.len() || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b) {
        return Err(Error::parse(SAMPLES_FILE, "unexpected header"));
    }
    let dim = header.len() - fixed.len();
    let mut batches: Vec<SampleBatch> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(SAMPLES_FILE, e))?;
        let ctx = || format!("{SAMPLES_FILE} row {}", line + 1);
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::parse(ctx(), e.to_string()))
        };
        let chain: usize = rec[0]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(ctx(), e.to_string()))?;
        let failed = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(ctx(), format!("bad failure flag `{other}`"))),
        };
        let x = (0..dim)
            .map(|i| num(fixed.len() + i))
            .collect::<Result<Vec<f64>>>()?;
        let idx = match batches.iter().position(|b| b.chain_id == chain) {
            Some(i) => i,
            None => {
                batches.push(SampleBatch {
                    chain_id: chain,
                    samples: Vec::new(),
                    log_posterior: Vec::new(),
                    log_prior: Vec::new(),
                    failed: Vec::new(),
                    wall_time: 0.0,
                    stats: ChainStats::default(),
                });
                batches.len() - 1
            }
        };
        let b = &mut batches[idx];
        b.samples.push(x);
        b.failed.push(failed);
        b.log_prior.push(num(3)?);
        b.log_posterior.push(num(4)?);
    }
    Ok(batches)
}

/// Header of the per-run metrics file. Timing is kept out of this file (it lives in the
/// manifest) so that the file is reproducible.
pub const RUN_METRICS_HEADER: &str =
    "scenario,method,n_samples,n_failures,failure_rate,mean_ll,std_ll,max_ll,c_disp,mean_accept,divergences";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

pub fn run_metrics_csv(
    scenario: &str,
    method: &str,
    report: &MetricsReport,
    batches: &[SampleBatch],
) -> String {
    let n: usize = batches.iter().map(SampleBatch::len).sum();
    let mean_accept = if n == 0 {
        0.0
    } else {
        batches
            .iter()
            .map(|b| b.stats.mean_accept * b.len() as f64)
            .sum::<f64>()
            / n as f64
    };
    let divergences: usize = batches.iter().map(|b| b.stats.divergences).sum();
    format!(
        "{RUN_METRICS_HEADER}\n{scenario},{method},{},{},{},{},{},{},{},{},{}\n",
        report.n_samples,
        report.n_failures,
        report.failure_rate,
        opt(report.mean_ll),
        opt(report.std_ll),
        opt(report.max_ll),
        report.c_disp,
        mean_accept,
        divergences
    )
}

/// `key=value` lines, one per entry.
pub fn key_values(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Value of `key` in `key=value` text.
pub fn lookup<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awkward_values_round_trip() {
        let batch = SampleBatch {
            chain_id: 3,
            samples: vec![vec![0.1, -1e-300], vec![f64::MAX, 5e-324]],
            log_posterior: vec![f64::NEG_INFINITY, -0.0],
            log_prior: vec![-1.5, 2.0 / 3.0],
            failed: vec![true, false],
            wall_time: 0.0,
            stats: ChainStats::default(),
        };
        let text = samples_csv(std::slice::from_ref(&batch), 2).unwrap();
        assert!(text.starts_with("chain,draw,failed,log_prior,log_posterior,x_0,x_1\n"));
        let back = parse_samples(&text).unwrap();
        assert_eq!(back, vec![batch]);
    }

    #[test]
    fn rejects_malformed_rows() {
        let head = "chain,draw,failed,log_prior,log_posterior,x_0\n";
        assert!(parse_samples(&format!("{head}0,0,2,0,0,0\n")).is_err());
        assert!(parse_samples(&format!("{head}0,0,1,zero,0,0\n")).is_err());
        assert!(parse_samples(&format!("{head}0,0,1,0,0\n")).is_err());
        assert!(parse_samples("a,b\n").is_err());
        assert_eq!(parse_samples(head).unwrap(), vec![]);
    }

    #[test]
    fn lookup_finds_keys() {
        let text = key_values(&[("a".into(), "1".into()), ("b".into(), "x=y".into())]);
        assert_eq!(lookup(&text, "b"), Some("x=y"));
        assert_eq!(lookup(&text, "c"), None);
    }
}
