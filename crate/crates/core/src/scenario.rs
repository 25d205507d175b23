//! Experiment presets, parameter samplers and the integrated-risk report.
//!
//! Two presets are built in:
//!
//! * `Oscillator`: unit mass and spring, uncertain damping `c`,
//!   `A = [[0, 1], [-1, -c]]`, position measured, `T = 5`.
//! * `Amplidyne`: two cascaded amplidynes with uncertain inductances
//!   `(L2, L4)`, constant excitation, output `k4 x4`, `T = 10`.
//!
//! Any other system can be run through [`run_experiment_with`] with a hand-built
//! [`Experiment`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::estimate::{
    entropic_trajectory_with, risk_neutral, worst_case_trajectory_with, DescentConfig, EstimatorLabel,
    EstimatorTrajectory,
};
use crate::exec::{Executor, Sequential};
use crate::integrate::IntegratorConfig;
use crate::kalman::{run_bank_with, FilterBank};
use crate::model::{Ensemble, Forcing, ParamTuple, SpdMatrix, TimeGrid};
use crate::risk::{rho, RiskSpec};
use crate::synth::{stream, synthesize, GaussianStream, GroundTruth, NoiseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Preset {
    Oscillator,
    Amplidyne,
}

impl Preset {
    /// Number of uncertain parameters.
    pub fn parameter_dim(&self) -> usize {
        match self {
            Preset::Oscillator => 1,
            Preset::Amplidyne => 2,
        }
    }

    pub fn default_grid(&self) -> TimeGrid {
        let t_end = match self {
            Preset::Oscillator => 5.0,
            Preset::Amplidyne => 10.0,
        };
        TimeGrid::new(t_end, 1000).expect("preset grid is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<Vec<f64>>,
}

/// Distribution of the uncertain parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Sampler {
    /// Independent uniforms on `[lo_i, hi_i)`.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    /// `exp(mean_i + sqrt(var_i) z_i)`; mean and variance of the underlying normal.
    LogNormal { mean: Vec<f64>, var: Vec<f64> },
    GaussianMixture { components: Vec<MixtureComponent> },
}

impl Sampler {
    pub fn dim(&self) -> usize {
        match self {
            Sampler::Uniform { lo, .. } => lo.len(),
            Sampler::LogNormal { mean, .. } => mean.len(),
            Sampler::GaussianMixture { components } => components.first().map_or(0, |c| c.mean.len()),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        match self {
            Sampler::Uniform { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return bad("uniform sampler needs lo <= hi of equal, nonzero length");
                }
            }
            Sampler::LogNormal { mean, var } => {
                if mean.len() != var.len() || mean.is_empty() || var.iter().any(|v| !(*v >= 0.0)) {
                    return bad("log-normal sampler needs nonnegative variances matching the means");
                }
            }
            Sampler::GaussianMixture { components } => {
                let d = self.dim();
                if components.is_empty() || d == 0 {
                    return bad("gaussian mixture needs at least one component");
                }
                for c in components {
                    if !(c.weight >= 0.0) || c.mean.len() != d || c.cov.len() != d || c.cov.iter().any(|r| r.len() != d)
                    {
                        return bad("gaussian mixture component has inconsistent shape or negative weight");
                    }
                }
                if !(components.iter().map(|c| c.weight).sum::<f64>() > 0.0) {
                    return bad("gaussian mixture weights sum to zero");
                }
            }
        }
        Ok(())
    }

    /// Draws `count` parameter vectors from `rng`.
    pub fn sample(&self, rng: &mut GaussianStream, count: usize) -> Result<Vec<DVector<f64>>> {
        self.validate()?;
        let d = self.dim();
        match self {
            Sampler::Uniform { lo, hi } => Ok((0..count)
                .map(|_| DVector::from_iterator(d, (0..d).map(|i| lo[i] + (hi[i] - lo[i]) * rng.uniform())))
                .collect()),
            Sampler::LogNormal { mean, var } => Ok((0..count)
                .map(|_| {
                    DVector::from_iterator(d, (0..d).map(|i| (mean[i] + var[i].sqrt() * rng.standard_normal()).exp()))
                })
                .collect()),
            Sampler::GaussianMixture { components } => {
                let factors = components
                    .iter()
                    .map(|c| {
                        let flat: Vec<f64> = c.cov.iter().flatten().copied().collect();
                        SpdMatrix::new(DMatrix::from_row_slice(d, d, &flat)).map(|m| m.cholesky_factor())
                    })
                    .collect::<Result<Vec<_>>>()?;
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut out = Vec::with_capacity(count);
                for _ in 0..count {
                    let u = rng.uniform() * total;
                    let mut acc = 0.0;
                    let mut pick = components.len() - 1;
                    for (j, c) in components.iter().enumerate() {
                        acc += c.weight;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    let z = rng.standard_normal_vector(d);
                    out.push(DVector::from_row_slice(&components[pick].mean) + &factors[pick] * z);
                }
                Ok(out)
            }
        }
    }
}

/// Which sampled member generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", content = "arg", rename_all = "snake_case"))]
pub enum TrueMemberRule {
    /// Largest damping (oscillator) or largest `L2 - L4` (amplidyne).
    #[default]
    PresetDefault,
    Index(usize),
    MaxCoordinate(usize),
    MinCoordinate(usize),
}

impl TrueMemberRule {
    /// Resolves the rule; ties go to the lowest index.
    pub fn select(&self, preset: Option<Preset>, samples: &[DVector<f64>]) -> Result<usize> {
        if samples.is_empty() {
            return Err(Error::Empty("parameter samples"));
        }
        let argmax = |score: &dyn Fn(&DVector<f64>) -> f64| {
            let mut best = 0;
            for (k, s) in samples.iter().enumerate() {
                if score(s) > score(&samples[best]) {
                    best = k;
                }
            }
            best
        };
        let coord = |i: usize| {
            if samples[0].len() <= i {
                Err(Error::InvalidParameter(alloc::format!("parameter coordinate {i} does not exist")))
            } else {
                Ok(i)
            }
        };
        match *self {
            TrueMemberRule::PresetDefault => match preset {
                Some(Preset::Oscillator) => Ok(argmax(&|s| s[0])),
                Some(Preset::Amplidyne) => Ok(argmax(&|s| s[0] - s[1])),
                None => Err(Error::InvalidParameter("custom systems need an explicit true-member rule".into())),
            },
            TrueMemberRule::Index(k) if k < samples.len() => Ok(k),
            TrueMemberRule::Index(k) => Err(Error::InvalidParameter(alloc::format!("true member {k} out of range"))),
            TrueMemberRule::MaxCoordinate(i) => coord(i).map(|i| argmax(&|s| s[i])),
            TrueMemberRule::MinCoordinate(i) => coord(i).map(|i| argmax(&|s| -s[i])),
        }
    }
}

/// Synthesis covariances, shared by all members.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub gamma: SpdMatrix,
    pub r: SpdMatrix,
    pub q: SpdMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub sampler: Sampler,
    pub n_members: usize,
    /// Finite positive risk aversions; solved in increasing order.
    pub thetas: Vec<f64>,
    /// Adds the risk-neutral column/row (`0`).
    pub include_neutral: bool,
    /// Adds the worst-case column/row (`inf`).
    pub include_worst_case: bool,
    pub seed: u64,
    pub grid: TimeGrid,
    /// `None` uses the preset's covariances.
    pub covariances: Option<Covariances>,
    pub true_member: TrueMemberRule,
    pub noise_scale: f64,
    pub integrator: IntegratorConfig,
    pub descent: DescentConfig,
}

/// Risk aversions reported by default.
pub const DEFAULT_THETAS: [f64; 6] = [0.1, 0.5, 1.0, 20.0, 750.0, 1000.0];

impl ScenarioConfig {
    pub fn new(preset: Preset, sampler: Sampler, seed: u64) -> Self {
        ScenarioConfig {
            preset,
            sampler,
            n_members: 100,
            thetas: DEFAULT_THETAS.to_vec(),
            include_neutral: true,
            include_worst_case: true,
            seed,
            grid: preset.default_grid(),
            covariances: None,
            true_member: TrueMemberRule::PresetDefault,
            noise_scale: 1.0,
            integrator: IntegratorConfig::default(),
            descent: DescentConfig::default(),
        }
    }

    /// Damping uniform on `[0.1, 3]`.
    pub fn oscillator_uniform(seed: u64) -> Self {
        Self::new(
            Preset::Oscillator,
            Sampler::Uniform {
                lo: vec![0.1],
                hi: vec![3.0],
            },
            seed,
        )
    }

    /// Damping log-normal with log-scale mean `-0.25` and variance `0.5`.
    pub fn oscillator_lognormal(seed: u64) -> Self {
        Self::new(
            Preset::Oscillator,
            Sampler::LogNormal {
                mean: vec![-0.25],
                var: vec![0.5],
            },
            seed,
        )
    }

    /// Inductances uniform on `[10, 40]^2`.
    pub fn amplidyne_uniform(seed: u64) -> Self {
        Self::new(
            Preset::Amplidyne,
            Sampler::Uniform {
                lo: vec![10.0, 10.0],
                hi: vec![40.0, 40.0],
            },
            seed,
        )
    }

    /// Inductances from the two-cluster mixture with a 5% outlier cluster.
    pub fn amplidyne_mixture(seed: u64) -> Self {
        Self::new(
            Preset::Amplidyne,
            Sampler::GaussianMixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.95,
                        mean: vec![15.0, 35.0],
                        cov: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
                    },
                    MixtureComponent {
                        weight: 0.05,
                        mean: vec![35.0, 15.0],
                        cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    },
                ],
            },
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::InvalidParameter("member count must be positive".into()));
        }
        if self.sampler.dim() != self.preset.parameter_dim() {
            return Err(Error::Dimension(alloc::format!(
                "sampler draws {}-dimensional parameters, preset needs {}",
                self.sampler.dim(),
                self.preset.parameter_dim()
            )));
        }
        if self.thetas.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("risk aversions must be finite and positive".into()));
        }
        self.integrator.validate()?;
        self.descent.validate()
    }

    /// Estimator labels in report order: `0`, increasing thetas, `inf`.
    pub fn labels(&self) -> Vec<EstimatorLabel> {
        let mut out = Vec::new();
        if self.include_neutral {
            out.push(EstimatorLabel::RiskNeutral);
        }
        let mut th = self.thetas.clone();
        th.sort_by(f64::total_cmp);
        th.dedup();
        out.extend(th.into_iter().map(EstimatorLabel::Entropic));
        if self.include_worst_case {
            out.push(EstimatorLabel::WorstCase);
        }
        out
    }
}

/// A fully specified data-generating setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub ensemble: Ensemble,
    pub noise: NoiseConfig,
    pub grid: TimeGrid,
    /// Parameter samples behind the members (empty for hand-built ensembles).
    pub samples: Vec<DVector<f64>>,
}

fn sample(cfg: &ScenarioConfig) -> Result<Vec<DVector<f64>>> {
    let mut rng = GaussianStream::new(cfg.seed, stream::SAMPLER);
    cfg.sampler.sample(&mut rng, cfg.n_members)
}

fn noise_for(cfg: &ScenarioConfig, preset: Covariances, samples: &[DVector<f64>]) -> Result<(Covariances, NoiseConfig)> {
    let cov = cfg.covariances.clone().unwrap_or(preset);
    let true_member = cfg.true_member.select(Some(cfg.preset), samples)?;
    let noise = NoiseConfig::new(cfg.seed, cov.gamma.clone(), cov.r.clone(), cov.q.clone(), true_member)
        .with_scale(cfg.noise_scale);
    Ok((cov, noise))
}

/// `A = [[0, 1], [-1, -c]]` for unit mass and spring constant.
pub fn oscillator_matrix(c: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -c])
}

pub fn build_oscillator(cfg: &ScenarioConfig) -> Result<Experiment> {
    if cfg.preset != Preset::Oscillator || cfg.sampler.dim() != 1 {
        return Err(Error::InvalidParameter("oscillator needs a one-dimensional damping sampler".into()));
    }
    let samples = sample(cfg)?;
    if let Some(k) = samples.iter().position(|s| !(s[0] > 0.0)) {
        return Err(Error::InvalidParameter(alloc::format!("damping sample {k} is not positive")));
    }
    let preset_cov = Covariances {
        gamma: SpdMatrix::scaled_identity(2, 0.1)?,
        r: SpdMatrix::scaled_identity(1, 0.05)?,
        q: SpdMatrix::scaled_identity(1, 0.05)?,
    };
    let (cov, noise) = noise_for(cfg, preset_cov, &samples)?;
    let members = samples
        .iter()
        .map(|s| ParamTuple::new(oscillator_matrix(s[0]), cov.gamma.clone(), cov.r.clone(), cov.q.clone()))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = Ensemble::new(
        members,
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DVector::from_row_slice(&[1.0, 0.0]),
        Forcing::Zero,
    )?;
    Ok(Experiment {
        ensemble,
        noise,
        grid: cfg.grid,
        samples,
    })
}

/// Fixed constants of the cascaded amplidynes.
pub mod amplidyne {
    pub const RHO: [f64; 4] = [5.0, 10.0, 5.0, 10.0];
    pub const K: [f64; 4] = [20.0, 50.0, 20.0, 50.0];
    pub const L1: f64 = 0.5;
    pub const L3: f64 = 0.5;
    /// Constant excitation voltage.
    pub const E0: f64 = 1.0;
    pub const X0: [f64; 4] = [0.5, 1.0, 10.0, 20.0];
}

/// Lower-bidiagonal system matrix for inductances `(L2, L4)`.
pub fn amplidyne_matrix(l2: f64, l4: f64) -> DMatrix<f64> {
    use amplidyne::*;
    let l = [L1, l2, L3, l4];
    let mut a = DMatrix::zeros(4, 4);
    for i in 0..4 {
        a[(i, i)] = -RHO[i] / l[i];
        if i > 0 {
            a[(i, i - 1)] = K[i - 1] / l[i];
        }
    }
    a
}

pub fn build_amplidyne(cfg: &ScenarioConfig) -> Result<Experiment> {
    use amplidyne::*;
    if cfg.preset != Preset::Amplidyne || cfg.sampler.dim() != 2 {
        return Err(Error::InvalidParameter("amplidyne needs a two-dimensional inductance sampler".into()));
    }
    let samples = sample(cfg)?;
    if let Some(k) = samples.iter().position(|s| !(s[0] > 0.0 && s[1] > 0.0)) {
        return Err(Error::InvalidParameter(alloc::format!("inductance sample {k} is not positive")));
    }
    let gamma_diag: Vec<f64> = X0.iter().map(|x| 0.25 * x.abs()).collect();
    let preset_cov = Covariances {
        gamma: SpdMatrix::from_diagonal(&gamma_diag)?,
        r: SpdMatrix::scaled_identity(1, (0.1 * E0.abs()).powi(2))?,
        q: SpdMatrix::scaled_identity(1, (0.1 * 400.0 * E0.abs()).powi(2))?,
    };
    let (cov, noise) = noise_for(cfg, preset_cov, &samples)?;
    let members = samples
        .iter()
        .map(|s| ParamTuple::new(amplidyne_matrix(s[0], s[1]), cov.gamma.clone(), cov.r.clone(), cov.q.clone()))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = Ensemble::new(
        members,
        DMatrix::from_row_slice(4, 1, &[1.0 / L1, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, K[3]]),
        DVector::from_row_slice(&X0),
        Forcing::Constant(DVector::from_row_slice(&[E0 / L1, 0.0, 0.0, 0.0])),
    )?;
    Ok(Experiment {
        ensemble,
        noise,
        grid: cfg.grid,
        samples,
    })
}

pub fn build(cfg: &ScenarioConfig) -> Result<Experiment> {
    cfg.validate()?;
    match cfg.preset {
        Preset::Oscillator => build_oscillator(cfg),
        Preset::Amplidyne => build_amplidyne(cfg),
    }
}

/// Integrated risks of every estimator under every risk kind.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    /// Risk kinds `tau`, labelled like estimators (`0` expectation, `inf` maximum).
    pub rows: Vec<EstimatorLabel>,
    pub columns: Vec<EstimatorLabel>,
    /// `cells[row][column]`.
    pub cells: Vec<Vec<f64>>,
    /// `traces[column][grid index][member]` = `V_k(t_i, xhat_theta(t_i))`.
    pub traces: Vec<Vec<Vec<f64>>>,
    /// Grid indices whose solve did not converge, per column.
    pub unconverged: Vec<Vec<usize>>,
}

fn risk_spec(label: EstimatorLabel) -> RiskSpec {
    match label {
        EstimatorLabel::RiskNeutral => RiskSpec::Expectation,
        EstimatorLabel::Entropic(t) => RiskSpec::Entropic(t),
        EstimatorLabel::WorstCase => RiskSpec::WorstCase,
    }
}

/// Trapezoidal rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        m => dt * (0.5 * (values[0] + values[m - 1]) + values[1..m - 1].iter().sum::<f64>()),
    }
}

/// Evaluates every row risk along every estimator.
pub fn risk_report(bank: &FilterBank, estimators: &[EstimatorTrajectory], rows: &[EstimatorLabel]) -> Result<RiskReport> {
    let grid = bank.grid();
    let mut traces = Vec::with_capacity(estimators.len());
    for est in estimators {
        if est.x.len() != grid.len() {
            return Err(Error::Dimension("estimator length differs from grid".into()));
        }
        let col: Vec<Vec<f64>> = (0..grid.len())
            .map(|ti| bank.snapshot(ti).map(|s| s.energies(&est.x[ti])))
            .collect::<Result<_>>()?;
        traces.push(col);
    }
    let mut cells = vec![vec![0.0; estimators.len()]; rows.len()];
    for (ri, row) in rows.iter().enumerate() {
        let spec = risk_spec(*row);
        for (ci, col) in traces.iter().enumerate() {
            let integrand = col.iter().map(|e| rho(spec, e)).collect::<Result<Vec<f64>>>()?;
            cells[ri][ci] = trapezoid(&integrand, grid.dt());
        }
    }
    Ok(RiskReport {
        rows: rows.to_vec(),
        columns: estimators.iter().map(|e| e.label).collect(),
        cells,
        traces,
        unconverged: estimators.iter().map(|e| e.unconverged()).collect(),
    })
}

impl RiskReport {
    fn index(labels: &[EstimatorLabel], l: EstimatorLabel) -> Option<usize> {
        labels.iter().position(|x| *x == l)
    }

    pub fn cell(&self, row: EstimatorLabel, column: EstimatorLabel) -> Option<f64> {
        Some(self.cells[Self::index(&self.rows, row)?][Self::index(&self.columns, column)?])
    }

    /// Rows whose minimum is not attained (within `rel_tol`) in the column of the same label.
    pub fn off_diagonal_minima(&self, rel_tol: f64) -> Vec<EstimatorLabel> {
        let mut bad = Vec::new();
        for (ri, row) in self.rows.iter().enumerate() {
            let Some(ci) = Self::index(&self.columns, *row) else {
                continue;
            };
            let min = self.cells[ri].iter().copied().fold(f64::INFINITY, f64::min);
            if self.cells[ri][ci] > min + rel_tol * min.abs() {
                bad.push(*row);
            }
        }
        bad
    }

    /// Columns in which the rows (ordered by increasing `tau`) decrease somewhere beyond `rel_tol`.
    pub fn non_monotone_columns(&self, rel_tol: f64) -> Vec<EstimatorLabel> {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|a, b| self.rows[*a].theta().total_cmp(&self.rows[*b].theta()));
        let mut bad = Vec::new();
        for (ci, col) in self.columns.iter().enumerate() {
            let ok = order.windows(2).all(|w| {
                let (lo, hi) = (self.cells[w[0]][ci], self.cells[w[1]][ci]);
                hi >= lo - rel_tol * lo.abs()
            });
            if !ok {
                bad.push(*col);
            }
        }
        bad
    }

    pub fn all_finite(&self) -> bool {
        self.cells.iter().flatten().all(|v| v.is_finite())
    }

    pub fn fully_converged(&self) -> bool {
        self.unconverged.iter().all(|u| u.is_empty())
    }
}

/// `(worse - better) / worse`.
pub fn relative_difference(worse: f64, better: f64) -> f64 {
    (worse - better) / worse
}

/// Trade-off of the most risk-averse entropic estimator against the risk-neutral one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementStats {
    /// Largest finite risk aversion in the report.
    pub theta: f64,
    /// How much better the risk-neutral estimator does in integrated expectation,
    /// relative to the risk-averse value.
    pub expectation_penalty: f64,
    /// How much better the risk-averse estimator does in integrated maximum,
    /// relative to the risk-neutral value.
    pub esssup_improvement: f64,
}

pub fn improvement_stats(report: &RiskReport) -> Result<ImprovementStats> {
    let theta = report
        .columns
        .iter()
        .filter_map(|c| match c {
            EstimatorLabel::Entropic(t) => Some(*t),
            _ => None,
        })
        .fold(f64::NAN, f64::max);
    if theta.is_nan() {
        return Err(Error::InvalidParameter("report has no entropic column".into()));
    }
    let missing = |what: &str| Error::InvalidParameter(alloc::format!("report lacks {what}"));
    let top = EstimatorLabel::Entropic(theta);
    let e0 = report
        .cell(EstimatorLabel::RiskNeutral, EstimatorLabel::RiskNeutral)
        .ok_or_else(|| missing("the expectation row or risk-neutral column"))?;
    let e_top = report.cell(EstimatorLabel::RiskNeutral, top).ok_or_else(|| missing("the expectation row"))?;
    let s0 = report
        .cell(EstimatorLabel::WorstCase, EstimatorLabel::RiskNeutral)
        .ok_or_else(|| missing("the maximum row"))?;
    let s_top = report.cell(EstimatorLabel::WorstCase, top).ok_or_else(|| missing("the maximum row"))?;
    Ok(ImprovementStats {
        theta,
        expectation_penalty: relative_difference(e_top, e0),
        esssup_improvement: relative_difference(s0, s_top),
    })
}

/// Everything produced by one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub experiment: Experiment,
    pub truth: GroundTruth,
    pub bank: FilterBank,
    /// In report column order.
    pub estimators: Vec<EstimatorTrajectory>,
    pub report: RiskReport,
}

impl ScenarioRun {
    pub fn estimator(&self, label: EstimatorLabel) -> Option<&EstimatorTrajectory> {
        self.estimators.iter().find(|e| e.label == label)
    }

    /// Short human-readable status of the solver outcomes.
    pub fn convergence_summary(&self) -> String {
        let mut s = String::new();
        for (est, bad) in self.estimators.iter().zip(&self.report.unconverged) {
            if !bad.is_empty() {
                s.push_str(&alloc::format!("theta={}: {} unconverged points; ", est.label, bad.len()));
            }
        }
        s
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    run_scenario_with(cfg, &Sequential)
}

pub fn run_scenario_with<E: Executor>(cfg: &ScenarioConfig, exec: &E) -> Result<ScenarioRun> {
    let experiment = build(cfg)?;
    run_experiment_with(experiment, &cfg.labels(), &cfg.integrator, &cfg.descent, exec)
}

/// Synthesizes data, runs the filter bank and builds the estimators in `labels`.
///
/// Entropic estimators are solved in increasing risk aversion, each warm
/// started from the previous one (the first from the risk-neutral estimate);
/// the worst case starts from the largest entropic estimate.
pub fn run_experiment_with<E: Executor>(
    experiment: Experiment,
    labels: &[EstimatorLabel],
    integrator: &IntegratorConfig,
    descent: &DescentConfig,
    exec: &E,
) -> Result<ScenarioRun> {
    let truth = synthesize(&experiment.ensemble, &experiment.grid, &experiment.noise, integrator)?;
    run_with_truth(experiment, truth, labels, integrator, descent, exec)
}

/// As [`run_experiment_with`], but on given measurements instead of synthesized ones.
pub fn run_with_truth<E: Executor>(
    experiment: Experiment,
    truth: GroundTruth,
    labels: &[EstimatorLabel],
    integrator: &IntegratorConfig,
    descent: &DescentConfig,
    exec: &E,
) -> Result<ScenarioRun> {
    if *truth.y.grid() != experiment.grid {
        return Err(Error::Dimension("measurement grid differs from the experiment grid".into()));
    }
    let bank = run_bank_with(&experiment.ensemble, &truth.y, integrator, exec)?;
    let neutral = risk_neutral(&bank)?;
    let mut thetas: Vec<f64> = labels
        .iter()
        .filter_map(|l| match l {
            EstimatorLabel::Entropic(t) => Some(*t),
            _ => None,
        })
        .collect();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();

    let mut entropic: Vec<EstimatorTrajectory> = Vec::with_capacity(thetas.len());
    for theta in thetas {
        let warm = entropic.last().unwrap_or(&neutral);
        let traj = entropic_trajectory_with(&bank, theta, descent, Some(warm), exec)?;
        entropic.push(traj);
    }
    let worst = if labels.contains(&EstimatorLabel::WorstCase) {
        Some(worst_case_trajectory_with(&bank, descent, Some(entropic.last().unwrap_or(&neutral)), exec)?)
    } else {
        None
    };

    let mut estimators = Vec::with_capacity(labels.len());
    for l in labels {
        let est = match l {
            EstimatorLabel::RiskNeutral => neutral.clone(),
            EstimatorLabel::Entropic(t) => entropic
                .iter()
                .find(|e| e.label == EstimatorLabel::Entropic(*t))
                .cloned()
                .ok_or_else(|| Error::InvalidParameter("missing entropic estimator".into()))?,
            EstimatorLabel::WorstCase => worst.clone().ok_or(Error::Empty("worst-case estimator"))?,
        };
        estimators.push(est);
    }
    let report = risk_report(&bank, &estimators, labels)?;
    Ok(ScenarioRun {
        experiment,
        truth,
        bank,
        estimators,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oscillator_matrix_template() {
        assert_eq!(oscillator_matrix(1.0), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]));
    }

    #[test]
    fn amplidyne_matrix_template() {
        let a = amplidyne_matrix(20.0, 20.0);
        assert_eq!(a[(1, 0)], 1.0);
        assert_eq!(a[(1, 1)], -0.5);
        assert_eq!(a[(3, 2)], 1.0);
        assert_eq!(a[(3, 3)], -0.5);
        assert_eq!(a[(0, 0)], -10.0);
        assert_eq!(a[(2, 1)], 100.0);
    }

    #[test]
    fn amplidyne_gamma() {
        let mut cfg = ScenarioConfig::amplidyne_uniform(1);
        cfg.n_members = 3;
        let exp = build(&cfg).unwrap();
        let g = exp.noise.gamma.as_matrix();
        let want = [0.125, 0.25, 2.5, 5.0];
        for i in 0..4 {
            assert_eq!(g[(i, i)], want[i]);
        }
        assert!((exp.noise.r.as_matrix()[(0, 0)] - 0.01).abs() < 1e-15);
        assert!((exp.noise.q.as_matrix()[(0, 0)] - 1600.0).abs() < 1e-9);
        let s = &exp.samples;
        let best = (0..3).max_by(|a, b| (s[*a][0] - s[*a][1]).total_cmp(&(s[*b][0] - s[*b][1]))).unwrap();
        assert_eq!(exp.noise.true_member, best);
    }

    #[test]
    fn uniform_oscillator_members() {
        let exp = build(&ScenarioConfig::oscillator_uniform(4)).unwrap();
        assert_eq!(exp.ensemble.len(), 100);
        assert!(exp.samples.iter().all(|s| (0.1..3.0).contains(&s[0])));
        let max = exp.samples.iter().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(exp.samples[exp.noise.true_member][0], max);
    }

    #[test]
    fn lognormal_samples_positive() {
        let mut rng = GaussianStream::new(3, stream::SAMPLER);
        let s = ScenarioConfig::oscillator_lognormal(3).sampler.sample(&mut rng, 2000).unwrap();
        assert!(s.iter().all(|v| v[0] > 0.0));
        let logs: Vec<f64> = s.iter().map(|v| v[0].ln()).collect();
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (logs.len() - 1) as f64;
        assert!((m + 0.25).abs() < 0.1);
        assert!((var - 0.5).abs() < 0.1);
    }

    #[test]
    fn mixture_has_both_clusters() {
        let mut rng = GaussianStream::new(5, stream::SAMPLER);
        let s = ScenarioConfig::amplidyne_mixture(5).sampler.sample(&mut rng, 2000).unwrap();
        let outliers = s.iter().filter(|v| v[0] > 25.0).count();
        assert!(outliers > 50 && outliers < 160, "{outliers}");
    }

    #[test]
    fn sampler_dimension_must_match() {
        let mut cfg = ScenarioConfig::oscillator_uniform(1);
        cfg.sampler = Sampler::Uniform {
            lo: vec![1.0, 1.0],
            hi: vec![2.0, 2.0],
        };
        assert!(build(&cfg).is_err());
    }

    #[test]
    fn nonpositive_damping_rejected() {
        let mut cfg = ScenarioConfig::oscillator_uniform(1);
        cfg.sampler = Sampler::Uniform {
            lo: vec![-1.0],
            hi: vec![0.5],
        };
        assert!(build(&cfg).is_err());
    }

    #[test]
    fn improvement_percentages() {
        assert!((relative_difference(10.589, 9.4986) - 0.103).abs() < 5e-4);
        assert!((relative_difference(38.15, 11.945) - 0.687).abs() < 5e-4);
        assert_eq!(relative_difference(2.0, 2.0), 0.0);
    }

    #[test]
    fn trapezoid_rule() {
        assert_eq!(trapezoid(&[1.0], 0.1), 0.0);
        assert!((trapezoid(&[0.0, 1.0, 2.0], 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_member_report_is_flat() {
        let mut cfg = ScenarioConfig::oscillator_uniform(8);
        cfg.n_members = 1;
        cfg.grid = TimeGrid::new(5.0, 100).unwrap();
        let run = run_scenario(&cfg).unwrap();
        let r_int = trapezoid(&run.bank.trajectory(0).r, cfg.grid.dt());
        for row in &run.report.cells {
            for v in row {
                assert!((v - r_int).abs() <= 1e-9 * (1.0 + r_int));
            }
        }
        assert!(run.report.fully_converged());
    }

    #[test]
    fn small_run_has_report_structure() {
        let mut cfg = ScenarioConfig::oscillator_lognormal(2);
        cfg.n_members = 12;
        cfg.grid = TimeGrid::new(5.0, 100).unwrap();
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.report.columns.len(), 8);
        assert!(run.report.all_finite());
        assert!(run.report.off_diagonal_minima(1e-9).is_empty());
        assert!(run.report.non_monotone_columns(1e-12).is_empty());
        let stats = improvement_stats(&run.report).unwrap();
        assert_eq!(stats.theta, 1000.0);
    }
}
