//! Everything a run writes, collected in memory before it touches the disk.

use std::collections::BTreeMap;
use std::path::Path;

use riskfilter_core::scenario::ScenarioRun;
use riskfilter_core::synth::GroundTruth;

use crate::io::{self, GroundTruthFile};
use crate::manifest::Manifest;
use crate::Error;

pub const MANIFEST: &str = "manifest.json";

/// Relative path to file contents, in path order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactSet {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl ArtifactSet {
    pub fn insert(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(path.into(), bytes);
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).map(Vec::as_slice)
    }

    /// Writes every file plus a manifest hashing them.
    pub fn write(&self, dir: &Path, mut manifest: Manifest) -> Result<(), Error> {
        for (rel, bytes) in &self.files {
            manifest.record(rel, bytes);
            io::write_file(&dir.join(rel), bytes)?;
        }
        io::write_file(&dir.join(MANIFEST), &io::to_json(&manifest))
    }
}

pub fn truth_artifacts(truth: &GroundTruth, true_member: usize) -> ArtifactSet {
    let mut set = ArtifactSet::default();
    set.insert("groundtruth.json", io::to_json(&GroundTruthFile::from_truth(truth, true_member)));
    set
}

/// Report tables, estimator trajectories, energy traces, member filters and
/// the measurements.
pub fn run_artifacts(run: &ScenarioRun) -> ArtifactSet {
    let grid = run.bank.grid();
    let mut set = truth_artifacts(&run.truth, run.experiment.noise.true_member);
    set.insert("report.csv", io::report_csv(&run.report));
    set.insert("report.json", io::report_json(&run.report));
    for (est, trace) in run.estimators.iter().zip(&run.report.traces) {
        let slug = io::label_slug(&est.label.to_string());
        set.insert(format!("trajectories/theta_{slug}.csv"), io::trajectory_csv(est, grid));
        set.insert(format!("traces/theta_{slug}.csv"), io::energy_trace_csv(trace, grid));
    }
    let width = run.bank.len().to_string().len().max(3);
    for traj in run.bank.trajectories() {
        set.insert(format!("bank/member_{:0width$}.csv", traj.member), io::filter_csv(traj, grid));
    }
    set
}
