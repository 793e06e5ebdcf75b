//! Registration hyperparameters as read from JSON.
//!
//! Every field may be omitted. Absent length scales are filled from the
//! target by [`RegistrationConfig::resolve`]: `sigma0` becomes half the
//! target bounding-box diagonal and `sigma_w` a tenth of it.

use serde::{Deserialize, Serialize};

use crate::deformation::{ShootingConfig, DEFAULT_TIME_STEPS};
use crate::dissimilarity::{Variant, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::geometry::DiscreteShape;
use crate::kernels::{DeformationKernel, VarifoldKernel, DEFAULT_SCALES};
use crate::optimizer::OptimizerConfig;

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_SIGMA_W_FRACTION: f64 = 0.1;
pub const DEFAULT_SIGMA0_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub sigma_w: Option<f64>,
    pub lambda: f64,
    pub epsilon: f64,
    pub sigma0: Option<f64>,
    pub scales: Vec<f64>,
    pub time_steps: usize,
    pub variant: Variant,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            sigma_w: None,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            sigma0: None,
            scales: DEFAULT_SCALES.to_vec(),
            time_steps: DEFAULT_TIME_STEPS,
            variant: Variant::PartialNormalized,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {value}")))
    }
}

/// A configuration with every length scale fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub sigma_w: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub sigma0: f64,
    pub scales: Vec<f64>,
    pub time_steps: usize,
    pub variant: Variant,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl ResolvedConfig {
    pub fn varifold_kernel(&self) -> Result<VarifoldKernel> {
        VarifoldKernel::new(self.sigma_w)
    }

    pub fn shooting(&self) -> Result<ShootingConfig> {
        ShootingConfig::new(self.time_steps, DeformationKernel::new(self.sigma0, self.scales.clone())?)
    }
}

impl RegistrationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma_w {
            positive("sigma_w", s)?;
        }
        if let Some(s) = self.sigma0 {
            positive("sigma0", s)?;
        }
        positive("lambda", self.lambda)?;
        positive("epsilon", self.epsilon)?;
        if self.scales.is_empty() {
            return Err(Error::InvalidConfig("scales must not be empty".into()));
        }
        for &s in &self.scales {
            positive("scale", s)?;
        }
        if self.time_steps == 0 {
            return Err(Error::InvalidConfig("time_steps must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    /// Validates and fills absent length scales from the target's bounding box.
    pub fn resolve(&self, target: &DiscreteShape) -> Result<ResolvedConfig> {
        self.resolve_with_diagonal(target.bbox_diagonal())
    }

    pub fn resolve_with_diagonal(&self, diagonal: f64) -> Result<ResolvedConfig> {
        self.validate()?;
        let sigma_w = self.sigma_w.unwrap_or(DEFAULT_SIGMA_W_FRACTION * diagonal);
        let sigma0 = self.sigma0.unwrap_or(DEFAULT_SIGMA0_FRACTION * diagonal);
        positive("sigma_w (from target bounding box)", sigma_w)?;
        positive("sigma0 (from target bounding box)", sigma0)?;
        Ok(ResolvedConfig {
            sigma_w,
            lambda: self.lambda,
            epsilon: self.epsilon,
            sigma0,
            scales: self.scales.clone(),
            time_steps: self.time_steps,
            variant: self.variant,
            optimizer: self.optimizer.clone(),
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_gives_defaults() {
        let cfg = RegistrationConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RegistrationConfig::default());
        assert_eq!(cfg.epsilon, 1e-3);
        assert_eq!(cfg.scales, vec![1.0, 4.0, 8.0, 16.0]);
        assert_eq!(cfg.time_steps, 10);
    }

    #[test]
    fn absent_scales_come_from_the_diagonal() {
        let r = RegistrationConfig::default().resolve_with_diagonal(8.0).unwrap();
        assert_eq!(r.sigma0, 4.0);
        assert_eq!(r.sigma_w, 0.8);
        let cfg = RegistrationConfig {
            sigma0: Some(1.5),
            sigma_w: Some(0.2),
            ..Default::default()
        };
        let r = cfg.resolve_with_diagonal(8.0).unwrap();
        assert_eq!((r.sigma0, r.sigma_w), (1.5, 0.2));
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            r#"{"sigma_w": -1.0}"#,
            r#"{"epsilon": 0.0}"#,
            r#"{"lambda": 0}"#,
            r#"{"scales": []}"#,
            r#"{"scales": [1, -4]}"#,
            r#"{"time_steps": 0}"#,
            r#"{"optimizer": {"backtrack": 2.0}}"#,
        ];
        for text in bad {
            let cfg = RegistrationConfig::from_json(text).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))), "{text}");
        }
    }

    #[test]
    fn rejects_unknown_fields_and_variants() {
        assert!(RegistrationConfig::from_json(r#"{"sigma": 1.0}"#).is_err());
        assert!(RegistrationConfig::from_json(r#"{"variant": "full"}"#).is_err());
        let cfg = RegistrationConfig::from_json(r#"{"variant": "naive_half"}"#).unwrap();
        assert_eq!(cfg.variant, Variant::NaiveHalf);
    }

    #[test]
    fn zero_diagonal_cannot_fill_scales() {
        assert!(RegistrationConfig::default().resolve_with_diagonal(0.0).is_err());
    }
}
