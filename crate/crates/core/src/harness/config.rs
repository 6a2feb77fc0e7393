use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::datagen::GeneratorConfig;
use crate::losses::{LossWeights, Objective, SurvivalNorm, TteLoss};
use crate::model::{Lab, ModelConfig};
use crate::surgery::{ProjectionOrder, TaskName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Baseline,
    TteReg,
    TteSurvival,
    Pvector,
    PseudoLac,
    PseudoNa,
    PseudoTrop,
    PseudoK,
    All,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Baseline,
        Preset::TteReg,
        Preset::TteSurvival,
        Preset::Pvector,
        Preset::PseudoLac,
        Preset::PseudoNa,
        Preset::PseudoTrop,
        Preset::PseudoK,
        Preset::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::TteReg => "tte_reg",
            Preset::TteSurvival => "tte_survival",
            Preset::Pvector => "pvector",
            Preset::PseudoLac => "pseudo_lac",
            Preset::PseudoNa => "pseudo_na",
            Preset::PseudoTrop => "pseudo_trop",
            Preset::PseudoK => "pseudo_k",
            Preset::All => "all",
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            Preset::Baseline => Objective::Baseline,
            Preset::TteReg => Objective::TteReg,
            Preset::TteSurvival => Objective::TteSurvival,
            Preset::Pvector => Objective::Pvector,
            Preset::PseudoLac => Objective::Pseudo(Lab::Lac),
            Preset::PseudoNa => Objective::Pseudo(Lab::Na),
            Preset::PseudoTrop => Objective::Pseudo(Lab::Trop),
            Preset::PseudoK => Objective::Pseudo(Lab::K),
            Preset::All => Objective::All,
        }
    }

    /// Active tasks in declaration order.
    pub fn tasks(self) -> Vec<TaskName> {
        let mut t = vec![TaskName::CA];
        match self {
            Preset::Baseline => {}
            Preset::TteReg | Preset::TteSurvival => t.push(TaskName::TTE),
            Preset::Pvector => t.push(TaskName::ID),
            Preset::PseudoLac | Preset::PseudoNa | Preset::PseudoTrop | Preset::PseudoK => t.push(TaskName::LAB),
            Preset::All => t.extend([TaskName::TTE, TaskName::LAB, TaskName::ID]),
        }
        t
    }

    /// Whether the preset trains the time-to-event regression head.
    pub fn has_tte_head(self) -> bool {
        matches!(self, Preset::TteReg | Preset::All)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Fixed,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surgery {
    #[default]
    None,
    Pcgrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupHyper {
    pub lr: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Recurrent aggregator and projection.
    pub aggregator: GroupHyper,
    /// Every task head, plus uncertainty log-variances.
    pub heads: GroupHyper,
    pub weighting: Weighting,
    pub surgery: Surgery,
    pub projection_order: ProjectionOrder,
    pub seeds: Vec<u64>,
    pub tte_loss: TteLoss,
    pub survival_norm: SurvivalNorm,
    /// Record pairwise task cosines every step when two or more tasks are active.
    pub telemetry: bool,
    pub eval_batch: usize,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Baseline,
            epochs: 50,
            batch_size: 256,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            aggregator: GroupHyper {
                lr: 2e-4,
                weight_decay: 1e-3,
            },
            heads: GroupHyper {
                lr: 1e-5,
                weight_decay: 0.0,
            },
            weighting: Weighting::Fixed,
            surgery: Surgery::None,
            projection_order: ProjectionOrder::Fixed,
            seeds: vec![0],
            tte_loss: TteLoss::L1,
            survival_norm: SurvivalNorm::Batch,
            telemetry: true,
            eval_batch: 512,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Profile sized for a laptop: smaller batches, few epochs, Adam with larger steps.
    pub fn desk() -> Self {
        Self {
            epochs: 3,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            aggregator: GroupHyper {
                lr: 2e-3,
                weight_decay: 1e-3,
            },
            heads: GroupHyper {
                lr: 2e-3,
                weight_decay: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` as a partial config layered over `base`; nested objects merge field by field.
    pub fn from_json_over(base: &Self, text: &str) -> Result<Self, HarnessError> {
        fn merge(dst: &mut serde_json::Value, src: serde_json::Value) {
            match (dst, src) {
                (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
                    for (k, v) in s {
                        match d.get_mut(&k) {
                            Some(slot) => merge(slot, v),
                            None => {
                                d.insert(k, v);
                            }
                        }
                    }
                }
                (dst, src) => *dst = src,
            }
        }
        let err = |e: serde_json::Error| HarnessError::Config(e.to_string());
        let mut value = serde_json::to_value(base).map_err(err)?;
        merge(&mut value, serde_json::from_str(text).map_err(err)?);
        let cfg: Self = serde_json::from_value(value).map_err(err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.eval_batch == 0 {
            return bad("eval_batch must be positive".into());
        }
        for (name, g) in [("aggregator", self.aggregator), ("heads", self.heads)] {
            if !(g.lr >= 0.0 && g.weight_decay >= 0.0 && g.lr.is_finite() && g.weight_decay.is_finite()) {
                return bad(format!("{name} lr and weight_decay must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("momentum and Adam betas must lie in [0, 1), adam_eps > 0".into());
        }
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.weights.validate().map_err(HarnessError::Config)?;
        self.generator
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let g = &self.generator;
        let m = &self.model;
        if (g.embed_dim, g.pvector_dim, g.windows_per_hour) != (m.embed_dim, m.pvector_dim, m.windows_per_hour) {
            return bad(format!(
                "generator (embed {}, pvector {}, windows/h {}) disagrees with model ({}, {}, {})",
                g.embed_dim, g.pvector_dim, g.windows_per_hour, m.embed_dim, m.pvector_dim, m.windows_per_hour
            ));
        }
        if self.surgery == Surgery::Pcgrad && self.preset.tasks().len() < 2 {
            return bad(format!(
                "pcgrad needs two or more tasks; preset {} has one",
                self.preset
            ));
        }
        Ok(())
    }

    /// Copy bound to one seed: the generator and trainer both use it.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.generator.seed = seed;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_recipe() {
        let c = ExperimentConfig::default();
        assert_eq!((c.epochs, c.batch_size), (50, 256));
        assert_eq!((c.aggregator.lr, c.aggregator.weight_decay), (2e-4, 1e-3));
        assert_eq!((c.heads.lr, c.heads.weight_decay), (1e-5, 0.0));
        assert_eq!(ExperimentConfig::desk().batch_size, 64);
        c.validate().unwrap();
        ExperimentConfig::desk().validate().unwrap();
    }

    #[test]
    fn json_rejects_unknown_fields_and_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"preset": "pseudo_k", "epochs": 3}"#).unwrap();
        assert_eq!(c.preset, Preset::PseudoK);
        assert_eq!(c.batch_size, 256);
        assert!(ExperimentConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": {"hidden": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"batch_size": 1}"#).is_err());
        let round = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&round).unwrap(), c);
    }

    #[test]
    fn partial_json_layers_over_a_profile() {
        let desk = ExperimentConfig::desk();
        let c = ExperimentConfig::from_json_over(&desk, r#"{"epochs": 1, "generator": {"n_cases": 20}}"#).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.optimizer), (1, 64, OptimizerKind::Adam));
        assert_eq!((c.generator.n_cases, c.generator.n_controls), (20, 1000));
        assert!(ExperimentConfig::from_json_over(&desk, r#"{"generator": {"cases": 20}}"#).is_err());
        assert_eq!(ExperimentConfig::from_json_over(&desk, "{}").unwrap(), desk);
    }

    #[test]
    fn presets_cover_the_nine_rows() {
        assert_eq!(Preset::ALL.len(), 9);
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert_eq!(Preset::All.tasks().len(), 4);
        assert_eq!(Preset::Baseline.tasks(), vec![TaskName::CA]);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let mut c = ExperimentConfig::default();
        c.generator.embed_dim = 12;
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            surgery: Surgery::Pcgrad,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
