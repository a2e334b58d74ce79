use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diffcore::UnrollSpec;
use crate::error::{Error, Result};
use crate::exemplar::ExemplarHyperparams;
use crate::model::{Activation, DescentSchedule, LossWeights};

use super::schedule::{build_schedule, MemoryBudget, PhaseSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Herding,
    Mnemonics,
    /// Keeps every old training row instead of exemplars; a reference
    /// ceiling rather than a strategy.
    UpperBound,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Herding => "herding",
            Strategy::Mnemonics => "mnemonics",
            Strategy::UpperBound => "upper_bound",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "random" => Some(Strategy::Random),
            "herding" => Some(Strategy::Herding),
            "mnemonics" => Some(Strategy::Mnemonics),
            "upper_bound" => Some(Strategy::UpperBound),
            _ => None,
        }
    }
}

/// Either the half-then-even rule (`total_classes`, `increments`) or an
/// explicit list of class counts, which takes precedence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_classes: usize,
    pub increments: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes_per_phase: Option<Vec<usize>>,
}

impl ScheduleConfig {
    pub fn resolve(&self) -> Result<PhaseSchedule> {
        let sched = match &self.classes_per_phase {
            Some(v) => PhaseSchedule::explicit(v.clone()),
            None => build_schedule(self.total_classes, self.increments),
        }
        .map_err(|e| Error::config("schedule", e.to_string()))?;
        if sched.total_classes != self.total_classes || sched.increments != self.increments {
            return Err(Error::config(
                "schedule.classes_per_phase",
                format!(
                    "{:?} disagrees with total_classes = {} and increments = {}",
                    sched.classes_per_phase, self.total_classes, self.increments
                ),
            ));
        }
        Ok(sched)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Isotropic 2-D Gaussians with means evenly spaced on a circle, one
    /// class per schedule class.
    Ring {
        radius: f64,
        variance: f64,
        train_per_class: usize,
        test_per_class: usize,
        /// Per-phase tangential mean shift, in standard deviations.
        #[serde(default)]
        drift: f64,
    },
    /// A labelled CSV file, split into phases and train/test by seed.
    Csv { path: PathBuf, test_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; empty for softmax regression.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Std of the Gaussian init for new output rows.
    pub head_init_std: f64,
}

/// A complete experiment. Missing keys take the desk-scale defaults, and
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub strategy: Strategy,
    pub adjust_old: bool,
    pub use_transfer: bool,
    pub use_distillation: bool,
    pub fine_tune: bool,
    pub schedule: ScheduleConfig,
    pub budget: MemoryBudget,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    /// Phase-0 training from scratch.
    pub base_training: DescentSchedule,
    /// Model-level training in incremental phases (`α₁`, epochs).
    pub model_training: DescentSchedule,
    /// Balanced fine-tuning; defaults to the temporary-model schedule
    /// (`α₂`, `K`).
    pub fine_tuning: Option<DescentSchedule>,
    pub exemplar: ExemplarHyperparams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            strategy: Strategy::Mnemonics,
            adjust_old: true,
            use_transfer: true,
            use_distillation: true,
            fine_tune: true,
            schedule: ScheduleConfig {
                total_classes: 6,
                increments: 2,
                classes_per_phase: Some(vec![2, 2, 2]),
            },
            budget: MemoryBudget::PerClass { m: 4 },
            data: DataConfig::Ring {
                radius: 4.0,
                variance: 1.0,
                train_per_class: 500,
                test_per_class: 100,
                drift: 0.0,
            },
            model: ModelConfig {
                hidden: vec![8],
                activation: Activation::Tanh,
                head_init_std: 0.01,
            },
            loss: LossWeights::default(),
            base_training: DescentSchedule { lr: 0.5, epochs: 300 },
            model_training: DescentSchedule { lr: 0.5, epochs: 200 },
            fine_tuning: None,
            exemplar: ExemplarHyperparams {
                outer_lr_new: 5.0,
                outer_lr_old: 0.1,
                outer_epochs: 50,
                unroll: UnrollSpec {
                    steps: 20,
                    inner_lr: 0.2,
                },
                num_splits: 2,
                lr_halving_period: 10,
                backtracking: false,
                clip: None,
            },
        }
    }
}

fn prefixed(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{section}.{field}"), message),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .filter(|_| e.message().contains("unknown field"))
                .unwrap_or("config")
                .to_string();
            Error::config(field, e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Every default spelled out, so the text alone reproduces the run.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.fine_tuning = Some(self.fine_tuning_schedule());
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn fine_tuning_schedule(&self) -> DescentSchedule {
        self.fine_tuning.unwrap_or(DescentSchedule {
            lr: self.exemplar.unroll.inner_lr,
            epochs: self.exemplar.unroll.steps,
        })
    }

    pub fn phase_schedule(&self) -> Result<PhaseSchedule> {
        self.schedule.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        self.phase_schedule()?;
        self.budget.validate()?;
        self.loss.validate().map_err(|e| prefixed("loss", e))?;
        self.base_training.validate("base_training")?;
        self.model_training.validate("model_training")?;
        self.fine_tuning_schedule().validate("fine_tuning")?;
        self.exemplar.validate().map_err(|e| prefixed("exemplar", e))?;
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        if !(self.model.head_init_std >= 0.0 && self.model.head_init_std.is_finite()) {
            return Err(Error::config("model.head_init_std", "must be non-negative"));
        }
        match &self.data {
            DataConfig::Ring {
                radius,
                variance,
                train_per_class,
                test_per_class,
                drift,
            } => {
                if !radius.is_finite() || !drift.is_finite() {
                    return Err(Error::config("data", "radius and drift must be finite"));
                }
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(Error::config("data.variance", "must be positive"));
                }
                if *train_per_class == 0 || *test_per_class == 0 {
                    return Err(Error::config("data", "per-class counts must be positive"));
                }
                if let MemoryBudget::PerClass { m } = self.budget {
                    if m > *train_per_class {
                        return Err(Error::config(
                            "budget.m",
                            format!("{m} exemplars exceed {train_per_class} training rows per class"),
                        ));
                    }
                }
            }
            DataConfig::Csv { test_fraction, .. } => {
                if !(0.0..1.0).contains(test_fraction) {
                    return Err(Error::config("data.test_fraction", "must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ExperimentConfig::default().resolved();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn bad_lambda_names_field() {
        let err = ExperimentConfig::from_toml("[loss]\nlambda = 1.5\ntemperature = 2.0\n").unwrap_err();
        match err {
            Error::Config { field, .. } => assert!(field.contains("lambda"), "{field}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::from_toml("sede = 3\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref field, .. } if field == "sede"),
            "{err:?}"
        );
    }

    #[test]
    fn schedule_disagreement() {
        let text = "[schedule]\ntotal_classes = 6\nincrements = 2\nclasses_per_phase = [2, 4]\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }
}
