//! Experiment configuration document.
//!
//! The document is JSON with a fixed field tree; unknown fields are
//! rejected. [`ExperimentConfig::load`] parses and validates, reporting every
//! offending field by its dotted path.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RoleSpec;
use crate::error::{Error, Result};
use crate::local::LocalTrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub training: LocalTrainConfig,
    pub method: MethodConfig,
    pub schedule: ScheduleConfig,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub test_fraction: f64,
}

fn default_min_client_samples() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub gamma: f64,
    #[serde(default = "default_min_client_samples")]
    pub min_client_samples: usize,
    pub roles: RoleSpec,
    /// Replays a partition dump instead of sampling a new one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
}

/// Which round driver to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Random sub-sampling with distance-reweighted sub-consensus models.
    Rscfed,
    /// All clients every round, labeled group given a fixed share.
    FedConsist,
    /// FedAvg over the labeled clients only.
    FedAvgSupervised,
    /// Random sub-sampling with plain size-weighted averaging per subset.
    RscfedNoDma,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::Rscfed,
        MethodKind::FedConsist,
        MethodKind::FedAvgSupervised,
        MethodKind::RscfedNoDma,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Rscfed => "rscfed",
            MethodKind::FedConsist => "fed_consist",
            MethodKind::FedAvgSupervised => "fed_avg_supervised",
            MethodKind::RscfedNoDma => "rscfed_no_dma",
        }
    }

    pub fn is_subsampled(&self) -> bool {
        matches!(self, MethodKind::Rscfed | MethodKind::RscfedNoDma)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

fn default_labeled_share() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Number of sub-sampled subsets per round.
    pub m: usize,
    /// Clients per subset.
    pub k: usize,
    /// Distance reweighting scale.
    pub beta: f64,
    #[serde(default = "default_labeled_share")]
    pub labeled_share: f64,
}

fn default_warmup_epochs() -> usize {
    6
}

fn default_eval_every() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub rounds: usize,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    /// Every constraint violation, by dotted field path.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push(format!("{field}: {msg}"));
            }
        };
        let d = &self.dataset;
        check(d.num_classes >= 2, "dataset.num_classes", "must be at least 2");
        check(d.dim >= 1, "dataset.dim", "must be at least 1");
        check(d.samples_per_class >= 1, "dataset.samples_per_class", "must be at least 1");
        check(d.separation > 0.0 && d.separation.is_finite(), "dataset.separation", "must be positive");
        check(
            d.test_fraction > 0.0 && d.test_fraction < 1.0,
            "dataset.test_fraction",
            "must lie in (0, 1)",
        );

        let p = &self.partition;
        check(p.num_clients >= 2, "partition.num_clients", "must be at least 2");
        check(p.gamma > 0.0 && p.gamma.is_finite(), "partition.gamma", "must be positive");
        match p.roles {
            RoleSpec::Split { labeled, unlabeled } => {
                check(
                    labeled + unlabeled == p.num_clients,
                    "partition.roles",
                    "labeled + unlabeled must equal partition.num_clients",
                );
                check(
                    labeled >= 1,
                    "partition.roles.labeled",
                    "at least one labeled client is required for warm-up",
                );
            }
            RoleSpec::Partial { fraction } => check(
                fraction > 0.0 && fraction <= 1.0,
                "partition.roles.fraction",
                "must lie in (0, 1]",
            ),
        }

        check(
            self.model.hidden_dims.iter().all(|&h| h >= 1),
            "model.hidden_dims",
            "every hidden width must be at least 1",
        );

        let m = &self.method;
        check(m.m >= 1, "method.m", "must be at least 1");
        check(
            m.k >= 1 && m.k <= p.num_clients,
            "method.k",
            "must lie in [1, partition.num_clients]",
        );
        check(m.beta >= 0.0 && m.beta.is_finite(), "method.beta", "must be finite and >= 0");
        check(
            m.labeled_share > 0.0 && m.labeled_share < 1.0,
            "method.labeled_share",
            "must lie in (0, 1)",
        );
        if m.kind == MethodKind::FedAvgSupervised {
            check(
                matches!(p.roles, RoleSpec::Split { labeled, .. } if labeled >= 1),
                "method.kind",
                "fed_avg_supervised needs fully labeled clients",
            );
        }

        check(self.schedule.eval_every >= 1, "schedule.eval_every", "must be at least 1");

        out.extend(self.training.problems("training."));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Desk-scale setting used by the examples and the acceptance suite:
    /// 3 Gaussian classes in 20 dimensions, ten clients (one labeled).
    pub fn desk_default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig {
                num_classes: 3,
                dim: 20,
                samples_per_class: 2000,
                separation: 6.0,
                test_fraction: 0.2,
            },
            partition: PartitionConfig {
                num_clients: 10,
                gamma: 0.8,
                min_client_samples: default_min_client_samples(),
                roles: RoleSpec::Split {
                    labeled: 1,
                    unlabeled: 9,
                },
                plan_path: None,
            },
            model: ModelConfig {
                hidden_dims: vec![32],
            },
            training: LocalTrainConfig::default(),
            method: MethodConfig {
                kind: MethodKind::Rscfed,
                m: 3,
                k: 5,
                beta: 10.0,
                labeled_share: default_labeled_share(),
            },
            schedule: ScheduleConfig {
                rounds: 150,
                warmup_epochs: default_warmup_epochs(),
                eval_every: default_eval_every(),
                checkpoint_every: 0,
            },
            master_seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::desk_default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_field_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::desk_default().to_json_pretty()).unwrap();
        v["schedule"].as_object_mut().unwrap().remove("rounds");
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("rounds"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::desk_default().to_json_pretty()).unwrap();
        v["method"]["gamma_typo"] = serde_json::json!(1);
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("gamma_typo"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::desk_default().to_json_pretty()).unwrap();
        v["partition"]["roles"]["extra"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn constraint_violations_list_every_field() {
        let mut cfg = ExperimentConfig::desk_default();
        cfg.method.k = 11;
        cfg.training.tau = 0.0;
        cfg.dataset.test_fraction = 1.0;
        cfg.partition.roles = RoleSpec::Split { labeled: 2, unlabeled: 9 };
        let Error::Config(problems) = cfg.validate().unwrap_err() else {
            panic!("expected config error");
        };
        let joined = problems.join("\n");
        for field in ["method.k", "training.tau", "dataset.test_fraction", "partition.roles"] {
            assert!(joined.contains(field), "{field} missing from {joined}");
        }
    }

    #[test]
    fn method_names_parse() {
        for k in MethodKind::ALL {
            assert_eq!(k.as_str().parse::<MethodKind>().unwrap(), k);
        }
        assert!("fedprox".parse::<MethodKind>().is_err());
    }
}
