//! Run configuration: a JSON file with defaults for every field, overridden
//! by command-line flags (flags win). Unknown keys are rejected by name.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use codkf::filters::GammaRule;
use codkf::model::TurnMatrixVariant;
use codkf::sim::{EnabledFilters, SimParams};
use codkf::tolerances::{DIVERGENCE_CEILING, TOL_RANK, TOL_RHO};
use codkf::topology::Experiment;

/// One batch's full parameterization. Every field has a default, so an empty
/// JSON object is a valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Experiment preset: 1 = mixed sensor quality, 2 = single high-quality
    /// node.
    pub experiment: u8,
    pub nodes: usize,
    pub edge_density: f64,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    /// Filter families to run; any nonempty subset of
    /// {"codkf", "cdkf", "ckf"}.
    pub filters: Vec<String>,
    pub tol_rank: f64,
    pub tol_rho: f64,
    pub divergence_ceiling: f64,
    /// Target turn rate in rad/s.
    pub turn_rate: f64,
    /// Sampling period in seconds.
    pub dt: f64,
    /// Process noise intensity (Q = q_scale * I).
    pub q_scale: f64,
    /// Use the transition matrix exactly as benchmarked (no 1/omega factor,
    /// symmetric-sign velocity block) instead of the exact discretization.
    pub paper_a: bool,
    /// Initial covariance scale (P0 = p0_scale * I).
    pub p0_scale: f64,
    /// "perturbed": initial estimates are truth plus seeded noise of
    /// covariance P0; "exact": estimates start at the true state.
    pub init: String,
    pub out_dir: String,
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: 1,
            nodes: 20,
            edge_density: 0.15,
            steps: 600,
            runs: 100,
            seed: 0,
            filters: vec!["codkf".into(), "cdkf".into(), "ckf".into()],
            tol_rank: TOL_RANK,
            tol_rho: TOL_RHO,
            divergence_ceiling: DIVERGENCE_CEILING,
            turn_rate: 0.5,
            dt: 0.1,
            q_scale: 2e-6,
            paper_a: false,
            p0_scale: 10.0,
            init: "perturbed".into(),
            out_dir: "out".into(),
            plots: false,
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub experiment: Option<u8>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub steps: Option<usize>,
    pub nodes: Option<usize>,
    pub out_dir: Option<String>,
    pub plots: bool,
    pub filters: Option<Vec<String>>,
    pub paper_a: bool,
}

impl RunConfig {
    /// Reads and validates a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(e) = o.experiment {
            self.experiment = e;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.runs {
            self.runs = r;
        }
        if let Some(s) = o.steps {
            self.steps = s;
        }
        if let Some(n) = o.nodes {
            self.nodes = n;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if o.plots {
            self.plots = true;
        }
        if let Some(f) = &o.filters {
            self.filters = f.clone();
        }
        if o.paper_a {
            self.paper_a = true;
        }
    }

    /// Range checks; every violation names the offending key.
    pub fn validate(&self) -> Result<()> {
        if !(self.experiment == 1 || self.experiment == 2) {
            bail!("experiment = {} out of range: must be 1 or 2", self.experiment);
        }
        if self.nodes == 0 {
            bail!("nodes = 0 out of range: must be at least 1");
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            bail!(
                "edge_density = {} out of range: must be in (0, 1]",
                self.edge_density
            );
        }
        if self.steps == 0 {
            bail!("steps = 0 out of range: must be at least 1");
        }
        if self.runs == 0 {
            bail!("runs = 0 out of range: must be at least 1");
        }
        if self.filters.is_empty() {
            bail!("filters is empty: enable at least one of codkf, cdkf, ckf");
        }
        for f in &self.filters {
            if !matches!(f.as_str(), "codkf" | "cdkf" | "ckf") {
                bail!("filters contains {f:?}: must be codkf, cdkf, or ckf");
            }
        }
        for (name, value, ok) in [
            ("tol_rank", self.tol_rank, self.tol_rank > 0.0),
            ("tol_rho", self.tol_rho, self.tol_rho > 0.0),
            (
                "divergence_ceiling",
                self.divergence_ceiling,
                self.divergence_ceiling > 0.0,
            ),
            ("dt", self.dt, self.dt > 0.0),
            ("q_scale", self.q_scale, self.q_scale >= 0.0),
            ("p0_scale", self.p0_scale, self.p0_scale > 0.0),
            ("turn_rate", self.turn_rate, self.turn_rate.is_finite()),
        ] {
            if !ok || !value.is_finite() {
                bail!("{name} = {value} out of range");
            }
        }
        if !matches!(self.init.as_str(), "perturbed" | "exact") {
            bail!("init = {:?} out of range: must be perturbed or exact", self.init);
        }
        Ok(())
    }

    pub fn enabled_filters(&self) -> EnabledFilters {
        EnabledFilters {
            codkf: self.filters.iter().any(|f| f == "codkf"),
            cdkf: self.filters.iter().any(|f| f == "cdkf"),
            ckf: self.filters.iter().any(|f| f == "ckf"),
        }
    }

    /// The simulation parameters this config describes. Call after
    /// [`RunConfig::validate`].
    pub fn sim_params(&self) -> SimParams {
        SimParams {
            nodes: self.nodes,
            edge_density: self.edge_density,
            experiment: if self.experiment == 2 {
                Experiment::SingleHighQuality
            } else {
                Experiment::MixedQuality
            },
            steps: self.steps,
            master_seed: self.seed,
            turn_rate: self.turn_rate,
            dt: self.dt,
            q_scale: self.q_scale,
            variant: if self.paper_a {
                TurnMatrixVariant::Legacy
            } else {
                TurnMatrixVariant::Standard
            },
            p0_scale: self.p0_scale,
            perturb_init: self.init == "perturbed",
            tol_rank: self.tol_rank,
            tol_rho: self.tol_rho,
            divergence_ceiling: self.divergence_ceiling,
            gamma: GammaRule::InverseNorm,
            enabled: self.enabled_filters(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_full_defaults() {
        let parsed: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, RunConfig::default());
        assert_eq!(parsed.nodes, 20);
        assert_eq!(parsed.runs, 100);
        assert_eq!(parsed.turn_rate, 0.5);
        assert_eq!(parsed.dt, 0.1);
        assert_eq!(parsed.q_scale, 2e-6);
        parsed.validate().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let config = RunConfig {
            experiment: 2,
            seed: 99,
            filters: vec!["codkf".into()],
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&config).unwrap();
        let reparsed: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = serde_json::from_str::<RunConfig>(r#"{"edge_dens": 0.2}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("edge_dens"), "{err}");
    }

    #[test]
    fn out_of_range_density_names_the_key() {
        let config = RunConfig {
            edge_density: 1.5,
            ..RunConfig::default()
        };
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("edge_density"), "{err}");
    }

    #[test]
    fn flags_win_over_file_values() {
        let mut config = RunConfig {
            seed: 7,
            runs: 50,
            ..RunConfig::default()
        };
        config.apply(&Overrides {
            seed: Some(123),
            filters: Some(vec!["ckf".into()]),
            ..Overrides::default()
        });
        assert_eq!(config.seed, 123);
        assert_eq!(config.runs, 50);
        assert_eq!(config.filters, vec!["ckf".to_string()]);
    }

    #[test]
    fn bad_filter_name_is_rejected() {
        let config = RunConfig {
            filters: vec!["hdfkf".into()],
            ..RunConfig::default()
        };
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("hdfkf"), "{err}");
    }

    #[test]
    fn experiment_preset_maps_to_quality_model() {
        let config = RunConfig {
            experiment: 2,
            ..RunConfig::default()
        };
        assert_eq!(
            config.sim_params().experiment,
            Experiment::SingleHighQuality
        );
    }
}
