//! Tables and plot data derived from protocol results and feature dumps.

use std::fmt::Write;

use super::IoError;
use crate::metrics::{Metrics, ProtocolReport};
use crate::train::TrainMode;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with unit eigenvectors as rows.
pub fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n);
    let mut v = vec![0.0; n * n];
    (0..n).for_each(|i| v[i * n + i] = 1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut col: Vec<f64> = (0..n).map(|k| v[k * n + i]).collect();
            // deterministic sign: largest-magnitude entry positive
            let big = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    (values, vectors)
}

/// Projection of centered rows onto the two leading principal components,
/// plus the variance along each.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, [f64; 2]), IoError> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.len() < 2 || d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(IoError::Inconsistent("projection needs at least two rows of equal width >= 2".into()));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let ci = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += ci * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n - 1.0;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let (values, vectors) = symmetric_eigen(cov, d);
    let project = |r: &Vec<f64>, k: usize| r.iter().zip(&mean).zip(&vectors[k]).map(|((x, m), v)| (x - m) * v).sum();
    let points = rows.iter().map(|r| [project(r, 0), project(r, 1)]).collect();
    Ok((points, [values[0], values[1]]))
}

fn cell(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * s),
        None => format!("{:.2} ± NA", 100.0 * mean),
    }
}

/// Fixed-width table of mean ± std in percent, one row per arm.
pub fn table_text(report: &ProtocolReport) -> String {
    let mut out = format!("{:<20}", "arm");
    for name in Metrics::NAMES {
        let _ = write!(out, "{name:>18}");
    }
    out.push('\n');
    for arm in &report.summary {
        let _ = write!(out, "{:<20}", arm.arm);
        for name in Metrics::NAMES {
            let m = &arm.metrics[name];
            let _ = write!(out, "{:>18}", cell(m.mean, m.std));
        }
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn table_csv(reports: &[(String, ProtocolReport)]) -> String {
    let mut out = String::from("protocol,arm,metric,mean,std,runs\n");
    for (label, r) in reports {
        for arm in &r.summary {
            for name in Metrics::NAMES {
                let m = &arm.metrics[name];
                let _ = writeln!(out, "{label},{},{name},{},{},{}", arm.arm, m.mean, opt(m.std), arm.runs);
            }
        }
    }
    out
}

/// Lower bound, adapted model and upper bound per metric with the fraction
/// of the gap closed.
pub fn coverage_csv(reports: &[(String, ProtocolReport)]) -> String {
    let mut out = String::from("protocol,metric,lower,uda,upper,coverage\n");
    for (label, r) in reports {
        let mean = |mode: TrainMode, name: &str| r.arm(mode.name()).map(|a| a.metrics[name].mean);
        for name in Metrics::NAMES {
            let (lo, mid, hi) = (mean(TrainMode::SourceOnly, name), mean(TrainMode::Uda, name), mean(TrainMode::TargetSupervised, name));
            let cov = r.coverage.get(name).copied().flatten();
            let _ = writeln!(out, "{label},{name},{},{},{},{}", opt(lo), opt(mid), opt(hi), opt(cov));
        }
    }
    out
}
