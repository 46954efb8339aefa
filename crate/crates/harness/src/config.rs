use crate::HarnessError;
use nmips_core::engine::SolverConfig;
use nmips_core::pdefam::{Family, DEFAULT_BC, DEFAULT_IC, DEFAULT_INTERIOR};
use nmips_core::datagen::DEFAULT_DATA_POINTS;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_NOISE_LEVELS: [f64; 4] = [0.0, 0.05, 0.10, 0.15];

/// Everything a command needs to reproduce a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub family: Family,
    /// One parameter vector per task; empty means the family's default table.
    pub params: Vec<Vec<f64>>,
    /// Give every task the same initial condition draw.
    pub shared_ic: bool,
    pub data_points: usize,
    pub interior_points: usize,
    pub ic_points: usize,
    pub bc_points: usize,
    /// Noise applied to the training values at solve time, as a fraction of their RMS.
    pub noise_sigma_frac: f64,
    pub noise_levels: Vec<f64>,
    /// Points per axis of the evaluation grid for closed-form families;
    /// `None` keeps the library default.
    pub eval_grid_points: Option<usize>,
    pub solver: SolverConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: Family::Adv1D,
            params: Vec::new(),
            shared_ic: false,
            data_points: DEFAULT_DATA_POINTS,
            interior_points: DEFAULT_INTERIOR,
            ic_points: DEFAULT_IC,
            bc_points: DEFAULT_BC,
            noise_sigma_frac: 0.0,
            noise_levels: DEFAULT_NOISE_LEVELS.to_vec(),
            eval_grid_points: None,
            solver: SolverConfig::default(),
            out_dir: PathBuf::from("results"),
            seeds: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parameter vectors in effect for this config.
    pub fn task_params(&self) -> Vec<Vec<f64>> {
        if self.params.is_empty() {
            self.family.default_params()
        } else {
            self.params.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        let expected = self.family.param_names().len();
        for (k, p) in self.params.iter().enumerate() {
            if p.len() != expected {
                return fail(format!(
                    "task {k}: {} takes {expected} parameter(s), got {}",
                    self.family.name(),
                    p.len()
                ));
            }
            if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return fail(format!("task {k}: parameters must be positive and finite"));
            }
        }
        if self.data_points == 0 {
            return fail("data_points must be positive".into());
        }
        if !(self.noise_sigma_frac >= 0.0 && self.noise_sigma_frac.is_finite()) {
            return fail("noise_sigma_frac must be non-negative".into());
        }
        if self.noise_levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return fail("noise levels must be non-negative".into());
        }
        if self.eval_grid_points.is_some_and(|n| n < 2) {
            return fail("eval_grid_points must be at least 2".into());
        }
        self.solver.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Seeds to run: the explicit override, then the config list, then
    /// `NMIPS_SEED`, then seed 0.
    pub fn resolve_seeds(&self, cli_seed: Option<u64>) -> Result<Vec<u64>, HarnessError> {
        if let Some(s) = cli_seed {
            return Ok(vec![s]);
        }
        if !self.seeds.is_empty() {
            return Ok(self.seeds.clone());
        }
        match std::env::var("NMIPS_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map(|s| vec![s])
                .map_err(|_| HarnessError::Config(format!("NMIPS_SEED is not an integer: {v:?}"))),
            Err(_) => Ok(vec![0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.task_params().len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"famly": "adv1d"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"solver": {"popsize": 10}}"#).is_err());
    }

    #[test]
    fn nested_settings_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"family": "advdiff1d", "params": [[0.5, 0.002]], "solver": {"pop_size": 20, "fitness": {"lambda_phys": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.family, Family::AdvDiff1D);
        assert_eq!(cfg.solver.pop_size, 20);
        assert_eq!(cfg.solver.fitness.lambda_phys, 0.5);
    }

    #[test]
    fn wrong_parameter_count_is_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"family": "adv3d", "params": [[0.5]]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"params": [[-0.5]]}"#).is_err());
    }

    #[test]
    fn cli_seed_wins() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![3, 4];
        assert_eq!(cfg.resolve_seeds(Some(9)).unwrap(), vec![9]);
        assert_eq!(cfg.resolve_seeds(None).unwrap(), vec![3, 4]);
    }
}
