//! File formats: matrices as row-major nested arrays, CSV with 17
//! significant digits, ground truth as JSON.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use riskfilter_core::estimate::EstimatorTrajectory;
use riskfilter_core::kalman::FilterTrajectory;
use riskfilter_core::model::{Signal, TimeGrid};
use riskfilter_core::scenario::{improvement_stats, RiskReport};
use riskfilter_core::synth::GroundTruth;
use serde::{Deserialize, Serialize};

use crate::Error;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err("matrix must be nonempty".into());
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("rows have different lengths".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn vectors(values: &[DVector<f64>]) -> Vec<Vec<f64>> {
    values.iter().map(|v| v.iter().copied().collect()).collect()
}

fn signal(grid: TimeGrid, values: &[Vec<f64>], name: &str) -> Result<Signal, Error> {
    let vals = values.iter().map(|v| DVector::from_column_slice(v)).collect();
    Signal::new(grid, vals).map_err(|e| Error::Input(format!("{name}: {e}")))
}

/// JSON form of [`GroundTruth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub grid: TimeGrid,
    pub true_member: usize,
    pub eta: Vec<f64>,
    pub x_true: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

impl GroundTruthFile {
    pub fn from_truth(truth: &GroundTruth, true_member: usize) -> Self {
        GroundTruthFile {
            grid: *truth.y.grid(),
            true_member,
            eta: truth.eta.iter().copied().collect(),
            x_true: vectors(truth.x_true.values()),
            y: vectors(truth.y.values()),
            v: vectors(truth.v.values()),
            mu: vectors(truth.mu.values()),
        }
    }

    pub fn into_truth(self) -> Result<GroundTruth, Error> {
        Ok(GroundTruth {
            x_true: signal(self.grid, &self.x_true, "x_true")?,
            y: signal(self.grid, &self.y, "y")?,
            eta: DVector::from_vec(self.eta),
            v: signal(self.grid, &self.v, "v")?,
            mu: signal(self.grid, &self.mu, "mu")?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Risk table: one row per risk kind, one column per estimator.
pub fn report_csv(report: &RiskReport) -> Vec<u8> {
    let mut header = vec!["tau".to_string()];
    header.extend(report.columns.iter().map(|c| c.to_string()));
    let rows = report.rows.iter().zip(&report.cells).map(|(label, cells)| {
        let mut r = vec![label.to_string()];
        r.extend(cells.iter().map(|v| fmt_f64(*v)));
        r
    });
    csv_bytes(&header, rows)
}

#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    rows: Vec<String>,
    columns: Vec<String>,
    cells: &'a [Vec<f64>],
    unconverged: &'a [Vec<usize>],
    #[serde(skip_serializing_if = "Option::is_none")]
    improvement: Option<ImprovementJson>,
}

#[derive(Debug, Serialize)]
struct ImprovementJson {
    theta: f64,
    expectation_penalty: f64,
    esssup_improvement: f64,
}

pub fn report_json(report: &RiskReport) -> Vec<u8> {
    let improvement = improvement_stats(report).ok().map(|s| ImprovementJson {
        theta: s.theta,
        expectation_penalty: s.expectation_penalty,
        esssup_improvement: s.esssup_improvement,
    });
    to_json(&ReportJson {
        rows: report.rows.iter().map(|l| l.to_string()).collect(),
        columns: report.columns.iter().map(|l| l.to_string()).collect(),
        cells: &report.cells,
        unconverged: &report.unconverged,
        improvement,
    })
}

/// `t, x_1..x_n, grad_norm, residual, iterations, converged`.
pub fn trajectory_csv(traj: &EstimatorTrajectory, grid: &TimeGrid) -> Vec<u8> {
    let n = traj.x.first().map_or(0, DVector::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["grad_norm", "residual", "iterations", "converged"].map(String::from));
    let rows = traj.x.iter().zip(&traj.diagnostics).enumerate().map(|(i, (x, d))| {
        let mut r = vec![fmt_f64(grid.time(i))];
        r.extend(x.iter().map(|v| fmt_f64(*v)));
        r.push(fmt_f64(d.grad_norm));
        r.push(fmt_f64(d.residual));
        r.push(d.iterations.to_string());
        r.push(u8::from(d.converged).to_string());
        r
    });
    csv_bytes(&header, rows)
}

/// Member energies along one estimator: `t, V_1..V_N`.
pub fn energy_trace_csv(trace: &[Vec<f64>], grid: &TimeGrid) -> Vec<u8> {
    let n = trace.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|k| format!("V{k}")));
    let rows = trace.iter().enumerate().map(|(i, e)| {
        let mut r = vec![fmt_f64(grid.time(i))];
        r.extend(e.iter().map(|v| fmt_f64(*v)));
        r
    });
    csv_bytes(&header, rows)
}

/// One filter of the bank: `t, xhat_1..xhat_n, r`.
pub fn filter_csv(traj: &FilterTrajectory, grid: &TimeGrid) -> Vec<u8> {
    let n = traj.xhat.first().map_or(0, DVector::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("xhat{i}")));
    header.push("r".into());
    let rows = traj.xhat.iter().zip(&traj.r).enumerate().map(|(i, (x, r))| {
        let mut row = vec![fmt_f64(grid.time(i))];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(*r));
        row
    });
    csv_bytes(&header, rows)
}

/// File-name-safe form of an estimator label.
pub fn label_slug(label: &str) -> String {
    label.replace('.', "p").replace('-', "m")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Output(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Output(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use riskfilter_core::estimate::{EstimatorLabel, PointDiagnostics};

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = matrix_to_rows(&m);
        assert_eq!(rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(rows_to_matrix(&rows).unwrap(), m);
        assert!(rows_to_matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(rows_to_matrix(&[]).is_err());
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn trajectory_layout() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let traj = EstimatorTrajectory {
            label: EstimatorLabel::Entropic(0.5),
            x: vec![DVector::from_vec(vec![1.0, 2.0]); 3],
            diagnostics: vec![PointDiagnostics::default(); 3],
        };
        let text = String::from_utf8(trajectory_csv(&traj, &grid)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,grad_norm,residual,iterations,converged");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("5.0000000000000000e-1,1.0000000000000000e0,"));
    }

    #[test]
    fn ground_truth_round_trip() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let s = |v: f64| Signal::constant(grid, DVector::from_vec(vec![v]));
        let truth = GroundTruth {
            x_true: s(1.0),
            y: s(2.0),
            eta: DVector::from_vec(vec![0.25]),
            v: s(0.0),
            mu: s(-1.0),
        };
        let file = GroundTruthFile::from_truth(&truth, 4);
        let text = serde_json::to_string(&file).unwrap();
        let back: GroundTruthFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.true_member, 4);
        assert_eq!(back.into_truth().unwrap(), truth);
    }

    #[test]
    fn slugs() {
        assert_eq!(label_slug("0.5"), "0p5");
        assert_eq!(label_slug("inf"), "inf");
        assert_eq!(label_slug("1e-4"), "1em4");
    }
}
