//! The run configuration file: one TOML document with sections for the
//! scene, trajectory, model, training, and evaluation. Unknown keys are
//! rejected. Flags win over the file; a top-level `seed` fills in any
//! section seed that is not set explicitly.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Angle;
use crate::model::ModelConfig;
use crate::scene::TrajectoryConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Fallback seed for sections that leave theirs unset.
    pub seed: Option<u64>,
    pub scene: SceneSection,
    pub trajectory: TrajectorySection,
    pub model: ModelSection,
    pub training: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub n_structures: usize,
    pub seed: Option<u64>,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            n_structures: 8,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub n_frames: usize,
    pub n_passes: usize,
    pub angle_max_deg: f64,
    pub angle_persistence: f64,
    pub angle_step_sd_deg: f64,
    pub seed: Option<u64>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let t = TrajectoryConfig::default();
        TrajectorySection {
            n_frames: t.n_frames,
            n_passes: t.n_passes,
            angle_max_deg: t.angle_max.degrees(),
            angle_persistence: t.angle_persistence,
            angle_step_sd_deg: t.angle_step_sd.degrees(),
            seed: None,
        }
    }
}

impl TrajectorySection {
    pub fn to_trajectory_config(&self, seed: u64) -> Result<TrajectoryConfig> {
        let cfg = TrajectoryConfig {
            n_frames: self.n_frames,
            n_passes: self.n_passes,
            angle_max: Angle::from_degrees(self.angle_max_deg)
                .map_err(|e| Error::Config(format!("angle_max_deg: {e}")))?,
            angle_persistence: self.angle_persistence,
            angle_step_sd: Angle::from_degrees(self.angle_step_sd_deg)
                .map_err(|e| Error::Config(format!("angle_step_sd_deg: {e}")))?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mirrors [`ModelConfig`] minus `n_classes`, which comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub seq_len: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub fc_dims: [usize; 3],
    pub ff_multiplier: usize,
    pub class_dec_hidden: usize,
    pub box_dec_hidden: usize,
    pub token_dim: Option<usize>,
    pub rotation_enabled: bool,
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            seq_len: m.seq_len,
            encoder_layers: m.encoder_layers,
            attention_heads: m.attention_heads,
            fc_dims: m.fc_dims,
            ff_multiplier: m.ff_multiplier,
            class_dec_hidden: m.class_dec_hidden,
            box_dec_hidden: m.box_dec_hidden,
            token_dim: None,
            rotation_enabled: m.rotation_enabled,
            seed: None,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, n_classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_classes,
            seq_len: self.seq_len,
            encoder_layers: self.encoder_layers,
            attention_heads: self.attention_heads,
            fc_dims: self.fc_dims,
            ff_multiplier: self.ff_multiplier,
            class_dec_hidden: self.class_dec_hidden,
            box_dec_hidden: self.box_dec_hidden,
            token_dim: self.token_dim,
            rotation_enabled: self.rotation_enabled,
            seed,
        }
    }
}

/// [`TrainConfig`] with an optional seed so the top-level fallback works.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub window_sample_stride: usize,
    pub checkpoint_every: usize,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr_peak: t.lr_peak,
            warmup_epochs: t.warmup_epochs,
            epochs: t.epochs,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            grad_clip_norm: t.grad_clip_norm,
            window_sample_stride: t.window_sample_stride,
            checkpoint_every: t.checkpoint_every,
            seed: None,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr_peak: self.lr_peak,
            warmup_epochs: self.warmup_epochs,
            epochs: self.epochs,
            batch_size: self.batch_size,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            grad_clip_norm: self.grad_clip_norm,
            window_sample_stride: self.window_sample_stride,
            checkpoint_every: self.checkpoint_every,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Every k-th window feeds the angle and correlation reports.
    pub stride: usize,
    /// Depth bins for the latent-spread report.
    pub n_bins: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            stride: 16,
            n_bins: 10,
        }
    }
}

impl RunConfig {
    /// Section seed, then top-level seed, then the given default.
    pub fn resolve_seed(&self, section: Option<u64>, fallback: u64) -> u64 {
        section.or(self.seed).unwrap_or(fallback)
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!(
        "run config {}: {e}",
        path.display()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_document() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.seq_len, 64);
        assert_eq!(cfg.training.epochs, 2500);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nbanana = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("top_banana = 1\n").is_err());
    }

    #[test]
    fn seed_fallback_order() {
        let cfg: RunConfig = toml::from_str("seed = 99\n[model]\nseed = 5\n").unwrap();
        assert_eq!(cfg.resolve_seed(cfg.model.seed, 0), 5);
        assert_eq!(cfg.resolve_seed(cfg.training.seed, 0), 99);
        let bare: RunConfig = toml::from_str("").unwrap();
        assert_eq!(bare.resolve_seed(bare.training.seed, 31), 31);
    }

    #[test]
    fn sections_convert_and_validate() {
        let cfg: RunConfig = toml::from_str(
            "[model]\nseq_len = 16\nencoder_layers = 2\n[training]\nepochs = 10\nwarmup_epochs = 3\n",
        )
        .unwrap();
        let m = cfg.model.to_model_config(8, 1);
        m.validate().unwrap();
        assert_eq!(m.seq_len, 16);
        let t = cfg.training.to_train_config(2).unwrap();
        assert_eq!(t.epochs, 10);

        let bad: RunConfig =
            toml::from_str("[training]\nepochs = 10\nwarmup_epochs = 30\n").unwrap();
        assert!(bad.training.to_train_config(0).is_err());
    }
}
