//! Optimizer run configuration: an `[optimize]` TOML section plus CLI
//! overrides. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;
use warpflow_core::consistency::ConsistencyParams;
use warpflow_core::loss::LossWeights;
use warpflow_core::objective::Stage;
use warpflow_core::optim::{AdamParams, OptimizeConfig, UpdateGates};
use warpflow_core::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeFileConfig {
    #[serde(default = "d_stage")]
    pub stage: String,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_max_iters")]
    pub max_iters: usize,
    #[serde(default = "d_levels")]
    pub levels: usize,
    #[serde(default = "d_num_scales")]
    pub num_scales: usize,
    #[serde(default = "d_alpha_ssim")]
    pub alpha_ssim: f64,
    #[serde(default = "d_lambda_ds")]
    pub lambda_ds: f64,
    #[serde(default = "d_lambda_fs")]
    pub lambda_fs: f64,
    #[serde(default = "d_lambda_gc")]
    pub lambda_gc: f64,
    #[serde(default = "d_consistency_alpha")]
    pub consistency_alpha: f64,
    #[serde(default = "d_consistency_beta")]
    pub consistency_beta: f64,
    #[serde(default)]
    pub naive_consistency: bool,
    #[serde(default)]
    pub freeze_depth: bool,
    #[serde(default)]
    pub freeze_pose: bool,
    /// "constant:<depth>" | "gt" | "file:<path.pfm>".
    #[serde(default = "d_init_depth")]
    pub init_depth: String,
    /// "identity" | "gt" | "gt-perturbed:<rot>:<trans>".
    #[serde(default = "d_init_pose")]
    pub init_pose: String,
    #[serde(default = "d_depth_min")]
    pub depth_min: f64,
    #[serde(default = "d_depth_max")]
    pub depth_max: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_stage() -> String {
    "both".into()
}
fn d_lr() -> f64 {
    2e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_epsilon() -> f64 {
    1e-8
}
fn d_max_iters() -> usize {
    2000
}
fn d_levels() -> usize {
    4
}
fn d_num_scales() -> usize {
    4
}
fn d_alpha_ssim() -> f64 {
    0.85
}
fn d_lambda_ds() -> f64 {
    0.5
}
fn d_lambda_fs() -> f64 {
    0.2
}
fn d_lambda_gc() -> f64 {
    0.2
}
fn d_consistency_alpha() -> f64 {
    3.0
}
fn d_consistency_beta() -> f64 {
    0.05
}
fn d_init_depth() -> String {
    "constant:8.0".into()
}
fn d_init_pose() -> String {
    "identity".into()
}
fn d_depth_min() -> f64 {
    0.1
}
fn d_depth_max() -> f64 {
    100.0
}
fn d_tol() -> f64 {
    1e-10
}
fn d_patience() -> usize {
    50
}

impl Default for OptimizeFileConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    optimize: Option<OptimizeFileConfig>,
}

impl OptimizeFileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ConfigFile = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(file.optimize.unwrap_or_default())
    }

    /// Which stages to run, in order.
    pub fn stages(&self) -> Result<Vec<Stage>> {
        match self.stage.as_str() {
            "rigid" => Ok(vec![Stage::Rigid]),
            "residual" => Ok(vec![Stage::Residual]),
            "both" => Ok(vec![Stage::Rigid, Stage::Residual]),
            "joint" => Ok(vec![Stage::Joint]),
            other => Err(Error::InvalidConfig(format!(
                "stage must be rigid|residual|both|joint, got {other:?}"
            ))),
        }
    }

    pub fn to_optimize_config(&self, stage: Stage) -> Result<OptimizeConfig> {
        let weights = LossWeights {
            alpha_ssim: self.alpha_ssim,
            lambda_ds: self.lambda_ds,
            lambda_fs: self.lambda_fs,
            lambda_gc: self.lambda_gc,
            num_scales: self.num_scales,
        };
        weights.validate()?;
        let consistency = ConsistencyParams {
            alpha_px: self.consistency_alpha,
            beta_rel: self.consistency_beta,
        };
        consistency.validate()?;
        let mut cfg = OptimizeConfig::for_stage(stage);
        cfg.adam = AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            stage,
        };
        cfg.adam.validate()?;
        cfg.objective.weights = weights;
        cfg.objective.consistency = consistency;
        cfg.objective.naive_consistency = self.naive_consistency;
        cfg.levels = self.levels;
        cfg.depth_min = self.depth_min;
        cfg.depth_max = self.depth_max;
        cfg.tol = self.tol;
        cfg.patience = self.patience;
        let mut gates = UpdateGates::for_stage(stage);
        if self.freeze_depth {
            gates.depth = false;
        }
        if self.freeze_pose {
            gates.pose = false;
        }
        cfg.gates = gates;
        Ok(cfg)
    }
}
