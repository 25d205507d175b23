//! Scenario files (TOML or JSON, same schema) and command-line overrides.
//!
//! ```toml
//! preset = "oscillator"
//! seed = 7
//! n_members = 100
//! thetas = [0.1, 0.5, 1, 20, 750, 1000]
//!
//! [sampler]
//! kind = "log_normal"
//! mean = [-0.25]
//! var = [0.5]
//!
//! [grid]
//! t_end = 5.0
//! num_intervals = 1000
//!
//! [integrator]
//! substeps = 10
//! ```
//!
//! Every field except `preset` and `seed` is optional; missing ones take the
//! preset defaults. Unknown keys are rejected.

use std::path::Path;

use nalgebra::DMatrix;
use riskfilter_core::estimate::DescentConfig;
use riskfilter_core::integrate::IntegratorConfig;
use riskfilter_core::model::{spd_check, TimeGrid, SYMMETRY_TOL};
use riskfilter_core::scenario::{Covariances, Preset, Sampler, ScenarioConfig, TrueMemberRule, DEFAULT_THETAS};
use serde::{Deserialize, Serialize};

use crate::io::rows_to_matrix;
use crate::Error;

/// Covariance matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub gamma: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Preset,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    #[serde(default = "default_members")]
    pub n_members: usize,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default = "yes")]
    pub include_neutral: bool,
    #[serde(default = "yes")]
    pub include_worst_case: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariances: Option<CovarianceSpec>,
    #[serde(default)]
    pub true_member: TrueMemberRule,
    #[serde(default = "unit")]
    pub noise_scale: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub descent: DescentConfig,
}

fn default_members() -> usize {
    100
}

fn default_thetas() -> Vec<f64> {
    DEFAULT_THETAS.to_vec()
}

fn yes() -> bool {
    true
}

fn unit() -> f64 {
    1.0
}

impl ConfigFile {
    /// Preset defaults for everything but the seed.
    pub fn new(preset: Preset, seed: u64) -> Self {
        ConfigFile {
            preset,
            seed,
            sampler: None,
            n_members: default_members(),
            thetas: default_thetas(),
            include_neutral: true,
            include_worst_case: true,
            grid: None,
            covariances: None,
            true_member: TrueMemberRule::PresetDefault,
            noise_scale: 1.0,
            integrator: IntegratorConfig::default(),
            descent: DescentConfig::default(),
        }
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    /// Applies a `key=value` override. Accepted keys: `seed`, `n_members`
    /// (alias `N_A`), `thetas` (comma separated), `substeps`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), Error> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        let bad = |what: &str| Error::Config(format!("override {key}: cannot parse `{value}` as {what}"));
        match key.trim() {
            "seed" => self.seed = value.trim().parse().map_err(|_| bad("an unsigned integer"))?,
            "n_members" | "N_A" => self.n_members = value.trim().parse().map_err(|_| bad("an unsigned integer"))?,
            "substeps" => self.integrator.substeps = value.trim().parse().map_err(|_| bad("an unsigned integer"))?,
            "thetas" => {
                self.thetas = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("a comma-separated list of numbers"))?
            }
            other => return Err(Error::Config(format!("unknown override key `{other}`"))),
        }
        Ok(())
    }

    /// Resolves defaults and validates.
    pub fn scenario(&self) -> Result<ScenarioConfig, Error> {
        let mut cfg = match (self.preset, &self.sampler) {
            (Preset::Oscillator, None) => ScenarioConfig::oscillator_uniform(self.seed),
            (Preset::Amplidyne, None) => ScenarioConfig::amplidyne_uniform(self.seed),
            (preset, Some(s)) => ScenarioConfig::new(preset, s.clone(), self.seed),
        };
        cfg.n_members = self.n_members;
        cfg.thetas = self.thetas.clone();
        cfg.include_neutral = self.include_neutral;
        cfg.include_worst_case = self.include_worst_case;
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if let Some(c) = &self.covariances {
            let spd = |rows: &[Vec<f64>], name: &str| -> Result<_, Error> {
                let m: DMatrix<f64> = rows_to_matrix(rows).map_err(|e| Error::Config(format!("covariance {name}: {e}")))?;
                spd_check(m, SYMMETRY_TOL).map_err(|e| Error::Config(format!("covariance {name}: {e}")))
            };
            cfg.covariances = Some(Covariances {
                gamma: spd(&c.gamma, "gamma")?,
                r: spd(&c.r, "r")?,
                q: spd(&c.q, "q")?,
            });
        }
        cfg.true_member = self.true_member;
        cfg.noise_scale = self.noise_scale;
        cfg.integrator = self.integrator;
        cfg.descent = self.descent;
        if !(cfg.noise_scale >= 0.0 && cfg.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be finite and nonnegative".into()));
        }
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Canonical JSON form, the input of the configuration hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml = r#"
            preset = "oscillator"
            seed = 3
            n_members = 12
            thetas = [0.5, 20]
            [sampler]
            kind = "log_normal"
            mean = [-0.25]
            var = [0.5]
            [grid]
            t_end = 2.0
            num_intervals = 50
        "#;
        let json = r#"{"preset": "oscillator", "seed": 3, "n_members": 12, "thetas": [0.5, 20],
            "sampler": {"kind": "log_normal", "mean": [-0.25], "var": [0.5]},
            "grid": {"t_end": 2.0, "num_intervals": 50}}"#;
        let a = ConfigFile::parse(toml, false).unwrap();
        let b = ConfigFile::parse(json, true).unwrap();
        assert_eq!(a, b);
        let cfg = a.scenario().unwrap();
        assert_eq!(cfg.n_members, 12);
        assert_eq!(cfg.grid.num_intervals(), 50);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("preset = \"oscillator\"\nseed = 1\ncolour = 3\n", false).is_err());
        assert!(ConfigFile::parse("preset = \"oscillator\"\nseed = 1\n[integrator]\nsubstep = 3\n", false).is_err());
        assert!(ConfigFile::parse(r#"{"preset": "pendulum", "seed": 1}"#, true).is_err());
    }

    #[test]
    fn invalid_grid_is_rejected_at_parse_time() {
        let text = "preset = \"oscillator\"\nseed = 1\n[grid]\nt_end = -1.0\nnum_intervals = 10\n";
        assert!(ConfigFile::parse(text, false).is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ConfigFile::new(Preset::Oscillator, 1);
        c.apply_override("seed=9").unwrap();
        c.apply_override("N_A=7").unwrap();
        c.apply_override("thetas=1,2.5").unwrap();
        c.apply_override("substeps=1").unwrap();
        assert_eq!((c.seed, c.n_members, c.integrator.substeps), (9, 7, 1));
        assert_eq!(c.thetas, vec![1.0, 2.5]);
        assert!(matches!(c.apply_override("colour=red"), Err(Error::Config(_))));
        assert!(matches!(c.apply_override("seed=-1"), Err(Error::Config(_))));
        assert!(matches!(c.apply_override("seed"), Err(Error::Config(_))));
    }

    #[test]
    fn sampler_dimension_is_checked() {
        let mut c = ConfigFile::new(Preset::Amplidyne, 1);
        c.sampler = Some(Sampler::Uniform { lo: vec![1.0], hi: vec![2.0] });
        assert!(matches!(c.scenario(), Err(Error::Config(_))));
    }

    #[test]
    fn covariance_override() {
        let mut c = ConfigFile::new(Preset::Oscillator, 1);
        c.covariances = Some(CovarianceSpec {
            gamma: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![0.1]],
            q: vec![vec![0.2]],
        });
        let cfg = c.scenario().unwrap();
        assert_eq!(cfg.covariances.unwrap().q.as_matrix()[(0, 0)], 0.2);
        c.covariances.as_mut().unwrap().q = vec![vec![-1.0]];
        assert!(c.scenario().is_err());
    }
}
