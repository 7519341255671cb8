//! Run configuration (TOML). Every field has a default, so an empty
//! document is a valid configuration.

use serde::{Deserialize, Serialize};

use crate::binning::BinStrategy;
use crate::error::{Error, Result};
use crate::inference::{BootstrapConfig, RNG_FAMILY};
use crate::robustness::SSource;
use crate::simulator::ObserverSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AurocVariant {
    /// Raw trial-level nlp as the confidence variable.
    #[default]
    Raw,
    /// Folded ratings under the cell's binning scheme.
    Folded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub enabled: bool,
    pub k_values: Vec<usize>,
    pub s_source: SSource,
    pub difficulty_strata: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            enabled: true,
            k_values: vec![3, 6],
            s_source: SSource::Estimated,
            difficulty_strata: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub bin_strategy: BinStrategy,
    pub reference_temperature: f64,
    pub bootstrap: BootstrapConfig,
    pub tost_delta: f64,
    pub similarity_threshold: f64,
    pub temperatures_h3: Vec<f64>,
    pub min_cell_trials: usize,
    pub ece_bins: usize,
    pub auroc_variant: AurocVariant,
    pub rng_family: String,
    pub robustness: RobustnessConfig,
    /// Observer grid for `simulate` and `recovery`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<ObserverSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 4,
            bin_strategy: BinStrategy::Quantile,
            reference_temperature: 1.0,
            bootstrap: BootstrapConfig::default(),
            tost_delta: 0.3,
            similarity_threshold: 0.85,
            temperatures_h3: vec![0.3, 0.5, 0.7, 1.0],
            min_cell_trials: 50,
            ece_bins: 10,
            auroc_variant: AurocVariant::Raw,
            rng_family: RNG_FAMILY.to_string(),
            robustness: RobustnessConfig::default(),
            grid: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !self.reference_temperature.is_finite() {
            return bad("reference_temperature must be finite".into());
        }
        self.bootstrap.validate()?;
        if !(self.tost_delta > 0.0 && self.tost_delta.is_finite()) {
            return bad(format!("tost_delta must be positive, got {}", self.tost_delta));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return bad("similarity_threshold must lie in (0, 1]".into());
        }
        if self.temperatures_h3.iter().any(|t| !t.is_finite()) {
            return bad("temperatures_h3 must be finite".into());
        }
        if self.ece_bins == 0 {
            return bad("ece_bins must be positive".into());
        }
        if self.rng_family != RNG_FAMILY {
            return bad(format!(
                "unsupported rng_family `{}` (this build provides `{RNG_FAMILY}`)",
                self.rng_family
            ));
        }
        if self.robustness.k_values.iter().any(|&k| k < 3) {
            return bad("robustness.k_values must all be at least 3".into());
        }
        if self.robustness.difficulty_strata == 0 {
            return bad("robustness.difficulty_strata must be positive".into());
        }
        if let SSource::Supplied(s) = self.robustness.s_source {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("supplied s must be positive, got {s}"));
            }
        }
        for spec in &self.grid {
            spec.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.k, 4);
        assert_eq!(c.bootstrap.n_resamples, 10_000);
        assert_eq!(c.bootstrap.seed, 42);
        assert_eq!(c.bootstrap.level, 0.95);
        assert_eq!(c.bootstrap.exclusion_bound, 10.0);
        assert_eq!(c.tost_delta, 0.3);
        assert_eq!(c.similarity_threshold, 0.85);
        assert_eq!(c.temperatures_h3, vec![0.3, 0.5, 0.7, 1.0]);
        assert_eq!(c.min_cell_trials, 50);
        assert_eq!(c.ece_bins, 10);
        assert_eq!(c.reference_temperature, 1.0);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.grid.push(ObserverSpec::ideal(1.5, 1000, 7));
        c.robustness.s_source = SSource::Supplied(0.57);
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("k = 1").is_err());
        assert!(RunConfig::from_toml("tost_delta = 0.0").is_err());
        assert!(RunConfig::from_toml("unknown_key = 3").is_err());
        assert!(RunConfig::from_toml("rng_family = \"pcg\"").is_err());
        assert!(RunConfig::from_toml("[bootstrap]\nn_resamples = 0").is_err());
    }
}
