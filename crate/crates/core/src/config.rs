//! Run configuration. Unknown keys are rejected at every level; missing
//! keys take their defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::IouKind;
use crate::loss::{LossConfig, LossWeights};
use crate::nn::Activation;
use crate::sim::{NoiseModel, SimConfig};
use crate::stga::{EdgeWeightMode, StgaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Sparse spatial and temporal graph attention.
    #[default]
    Stga,
    /// Dense multi-head self-attention over current and previous nodes.
    Dense,
}

/// Step size over the course of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` towards zero at the last step.
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Step size for update `step` of `steps`.
    pub fn at(self, lr: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let f = step as f64 / steps.max(1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    /// Frames of each training scene used as samples.
    pub frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.01,
            schedule: LrSchedule::Cosine,
            frames: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub theta: f64,
    pub n_g: usize,
    pub d_s: f64,
    pub d_u: f64,
    pub max_neighbors: Option<usize>,
    pub edge_weight_mode: EdgeWeightMode,
    pub tau: f64,
    pub activation: Activation,
    pub leaky_slope: f64,
    pub n_p: usize,
    pub n_res: usize,
    /// Embedding width.
    pub c: usize,
    /// Heads of the dense baseline.
    pub heads: usize,
    pub lambda_cls: f64,
    pub lambda_h: f64,
    pub lambda_giou: f64,
    pub lambda_r: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub huber_delta: f64,
    pub reg_iou: IouKind,
    pub fd_step: f64,
    /// Predictions above this score count as confident.
    pub score_threshold: f64,
    /// Occupancy grid side for the feature recurrence.
    pub grid: usize,
    pub gru_channels: usize,
    /// Temporal modules on.
    pub sequential: bool,
    pub graph_mode: GraphMode,
    pub tqr: bool,
    pub iou_reg: bool,
    pub sim: SimConfig,
    pub noise: NoiseModel,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        let stga = StgaConfig::default();
        let loss = LossConfig::default();
        Self {
            theta: 0.5,
            n_g: 24,
            d_s: stga.d_s,
            d_u: stga.d_u,
            max_neighbors: stga.max_neighbors,
            edge_weight_mode: stga.edge_weight_mode,
            tau: stga.tau,
            activation: stga.activation,
            leaky_slope: stga.leaky_slope,
            n_p: 40,
            n_res: 12,
            c: 32,
            heads: 8,
            lambda_cls: loss.weights.lambda_cls,
            lambda_h: loss.weights.lambda_h,
            lambda_giou: loss.weights.lambda_giou,
            lambda_r: loss.weights.lambda_r,
            focal_alpha: loss.focal_alpha,
            focal_gamma: loss.focal_gamma,
            huber_delta: loss.huber_delta,
            reg_iou: loss.reg_iou,
            fd_step: loss.fd_step,
            score_threshold: 0.1,
            grid: 16,
            gru_channels: 2,
            sequential: true,
            graph_mode: GraphMode::Stga,
            tqr: true,
            iou_reg: true,
            sim: SimConfig::default(),
            noise: NoiseModel::default(),
            train: TrainConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if self.n_g == 0 || self.n_p == 0 || self.c == 0 || self.grid == 0 || self.gru_channels == 0 {
            return Err(Error::Config("n_g, n_p, c, grid and gru_channels must be positive".into()));
        }
        if self.heads == 0 || !self.c.is_multiple_of(self.heads) {
            return Err(Error::Heads {
                heads: self.heads,
                width: self.c,
            });
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(self.fd_step > 0.0) || !(self.huber_delta > 0.0) {
            return Err(Error::Config("score_threshold, fd_step or huber_delta out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal_alpha must lie in [0, 1] and focal_gamma be >= 0".into()));
        }
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config("train.lr must be finite and >= 0".into()));
        }
        self.stga().validate()?;
        self.loss().weights.validate()?;
        self.sim.validate()?;
        self.noise.validate()
    }

    pub fn stga(&self) -> StgaConfig {
        StgaConfig {
            d_s: self.d_s,
            d_u: self.d_u,
            max_neighbors: self.max_neighbors,
            edge_weight_mode: self.edge_weight_mode,
            tau: self.tau,
            activation: self.activation,
            leaky_slope: self.leaky_slope,
        }
    }

    /// Loss settings; the regularizer weight is zero when `iou_reg` is off.
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            weights: LossWeights {
                lambda_cls: self.lambda_cls,
                lambda_h: self.lambda_h,
                lambda_giou: self.lambda_giou,
                lambda_r: if self.iou_reg { self.lambda_r } else { 0.0 },
            },
            focal_alpha: self.focal_alpha,
            focal_gamma: self.focal_gamma,
            huber_delta: self.huber_delta,
            reg_iou: self.reg_iou,
            fd_step: self.fd_step,
        }
    }

    /// Recollection budget; zero when recollection is off.
    pub fn effective_n_res(&self) -> usize {
        if self.tqr {
            self.n_res
        } else {
            0
        }
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
