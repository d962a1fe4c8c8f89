//! Flat `key = value` run configuration (TOML syntax).
//!
//! Every key is optional and defaults to [`RunConfig::default`]. Unknown keys
//! and values of the wrong type are rejected with the key named.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::axis::AxisCodecConfig;
use crate::loss::{LossConfig, ProjectionVariant};
use crate::model::ModelConfig;
use crate::nn::AttentionConfig;

pub const SEED_ENV: &str = "PAXKIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: Vec<String>,

    // model
    pub k: usize,
    pub n_queries: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_sample_points: usize,
    pub ffn_dim: usize,
    pub patch_size: usize,
    pub encoder_layer: bool,
    pub use_point_queries: bool,
    pub use_group_self_attention: bool,
    pub use_decoupled_cross_attention: bool,
    pub fixed_axis_mode: bool,

    // axis codec
    pub n_bins: usize,
    pub sigma: f64,
    pub epsilon: f64,

    // loss
    pub lambda1: f64,
    pub lambda2: f64,
    pub cls_weight: f64,
    /// `max`, `with_penalty` or `top_k`.
    pub projection_variant: String,
    pub top_k: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub aux_loss: bool,
    pub select_loss_weight: f64,

    // optimizer
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,
    /// Train on a random flip or quarter turn of each image per step.
    pub augment: bool,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Evaluate mAP every this many epochs (and at the last one); 0 disables.
    pub eval_every: usize,
    pub score_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let l = LossConfig::default();
        let c = AxisCodecConfig::default();
        Self {
            seed: 0,
            classes: super::synth::default_classes(),
            k: m.k,
            n_queries: m.n_queries,
            dim: m.dim,
            n_layers: m.n_layers,
            n_heads: m.attention.n_heads,
            n_sample_points: m.attention.n_sample_points,
            ffn_dim: m.ffn_dim,
            patch_size: m.patch_size,
            encoder_layer: m.encoder_layer,
            use_point_queries: m.use_point_queries,
            use_group_self_attention: m.use_group_self_attention,
            use_decoupled_cross_attention: m.use_decoupled_cross_attention,
            fixed_axis_mode: m.fixed_axis_mode,
            n_bins: c.n_bins,
            sigma: c.sigma,
            epsilon: c.epsilon,
            lambda1: l.lambda1,
            lambda2: l.lambda2,
            cls_weight: l.cls_weight,
            projection_variant: "max".into(),
            top_k: 2,
            focal_alpha: l.focal_alpha,
            focal_gamma: l.focal_gamma,
            aux_loss: true,
            select_loss_weight: 1.0,
            epochs: 300,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 1.0,
            augment: false,
            lr_decay_epochs: vec![200],
            lr_decay_factor: 0.1,
            eval_every: 25,
            score_threshold: 0.0,
        }
    }
}

fn type_name(v: &toml::Value) -> &'static str {
    v.type_str()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| DataError::ConfigSyntax(e.to_string()))?;
        let defaults = match toml::Value::try_from(RunConfig::default()) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("default config serializes to a table"),
        };
        for (key, value) in table.iter_mut() {
            let Some(expected) = defaults.get(key) else {
                return Err(DataError::UnknownKey(key.clone()));
            };
            check_type(key, expected, value)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| DataError::ConfigSyntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<(), DataError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| DataError::TypeError {
                key: SEED_ENV.into(),
                expected: "unsigned integer",
                found: v.clone(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.model_config().validate().map_err(|e| DataError::InvalidParams(e.to_string()))?;
        self.codec().validate().map_err(|e| DataError::InvalidParams(e.to_string()))?;
        self.variant()?;
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(DataError::InvalidParams("learning_rate must be positive and betas in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<ProjectionVariant, DataError> {
        match self.projection_variant.as_str() {
            "max" => Ok(ProjectionVariant::Max),
            "with_penalty" => Ok(ProjectionVariant::WithPenalty),
            "top_k" => Ok(ProjectionVariant::TopK(self.top_k)),
            other => Err(DataError::InvalidParams(format!(
                "projection_variant must be max, with_penalty or top_k, got {other:?}"
            ))),
        }
    }

    pub fn codec(&self) -> AxisCodecConfig {
        AxisCodecConfig { n_bins: self.n_bins, sigma: self.sigma, epsilon: self.epsilon }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            n_queries: self.n_queries,
            dim: self.dim,
            n_layers: self.n_layers,
            n_classes: self.classes.len(),
            n_bins: self.n_bins,
            attention: AttentionConfig { dim: self.dim, n_heads: self.n_heads, n_sample_points: self.n_sample_points },
            ffn_dim: self.ffn_dim,
            patch_size: self.patch_size,
            in_channels: 3,
            encoder_layer: self.encoder_layer,
            use_point_queries: self.use_point_queries,
            use_group_self_attention: self.use_group_self_attention,
            use_decoupled_cross_attention: self.use_decoupled_cross_attention,
            fixed_axis_mode: self.fixed_axis_mode,
        }
    }

    pub fn loss_config(&self) -> Result<LossConfig, DataError> {
        Ok(LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            cls_weight: self.cls_weight,
            variant: self.variant()?,
            focal_alpha: self.focal_alpha,
            focal_gamma: self.focal_gamma,
            codec: self.codec(),
        })
    }
}

/// Compares against the default value's type; integers are accepted for
/// float keys and widened in place.
fn check_type(key: &str, expected: &toml::Value, value: &mut toml::Value) -> Result<(), DataError> {
    use toml::Value as V;
    let err =
        |exp: &'static str, v: &V| DataError::TypeError { key: key.into(), expected: exp, found: type_name(v).into() };
    match (expected, &*value) {
        (V::Float(_), V::Integer(i)) => {
            *value = V::Float(*i as f64);
            Ok(())
        }
        (V::Integer(_), V::Integer(i)) if *i < 0 => {
            Err(DataError::TypeError { key: key.into(), expected: "non-negative integer", found: i.to_string() })
        }
        (V::Array(_), V::Array(items)) => {
            let elem = match key {
                "classes" => "string",
                _ => "integer",
            };
            if items.iter().all(|i| i.type_str() == elem && i.as_integer().is_none_or(|n| n >= 0)) {
                Ok(())
            } else {
                Err(err(if elem == "string" { "array of strings" } else { "array of non-negative integers" }, value))
            }
        }
        (e, v) if e.type_str() == v.type_str() => Ok(()),
        (e, v) => Err(err(e.type_str(), v)),
    }
}
