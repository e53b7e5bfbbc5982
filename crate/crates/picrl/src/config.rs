//! Experiment configuration: one JSON document with `workload`,
//! `predictor`, `estimator`, `agent`, `controller` and `experiment`
//! sections. Unknown keys are rejected; omitted keys take the documented
//! defaults; the fully resolved document is written back out as
//! `defaults.json` so every run is auditable.

use picrl_core::agent::{AblationFlags, AgentConfig};
use picrl_core::controller::ControllerConfig;
use picrl_core::env::CostModel;
use picrl_core::estimator::EstimatorConfig;
use picrl_core::predictor::PredictorConfig;
use picrl_core::workload::SplitSpec;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSource {
    Seasonal {
        length: usize,
        period: usize,
        noise_cv: f64,
    },
    Bursty {
        length: usize,
        target_pmr: f64,
        target_cv: f64,
    },
    Csv {
        path: String,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    /// Shift point as a fraction of the trace length.
    pub at_fraction: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub source: WorkloadSource,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    #[serde(default = "default_split")]
    pub split: SplitSection,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

fn default_split() -> SplitSection {
    SplitSection {
        train_frac: 0.6,
        val_frac: 0.2,
        test_frac: 0.2,
    }
}

impl From<SplitSection> for SplitSpec {
    fn from(s: SplitSection) -> Self {
        SplitSpec {
            train_frac: s.train_frac,
            val_frac: s.val_frac,
            test_frac: s.test_frac,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub window_len: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub context_width: usize,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let c = PredictorConfig::default();
        PredictorSection {
            window_len: c.window_len,
            hidden_width: c.hidden_width,
            learning_rate: c.learning_rate,
            lr_decay: c.lr_decay,
            epochs: c.epochs,
            batch_size: c.batch_size,
            context_width: c.context_width,
        }
    }
}

impl PredictorSection {
    pub fn to_core(&self, seed: u64) -> PredictorConfig {
        PredictorConfig {
            window_len: self.window_len,
            hidden_width: self.hidden_width,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            context_width: self.context_width,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub window: usize,
    pub beta: f64,
    pub n_max: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let c = EstimatorConfig::default();
        EstimatorSection {
            window: c.window_capacity,
            beta: c.beta,
            n_max: c.n_max,
        }
    }
}

impl EstimatorSection {
    pub fn to_core(&self) -> EstimatorConfig {
        EstimatorConfig {
            window_capacity: self.window,
            beta: self.beta,
            n_max: self.n_max,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub hidden_width: usize,
    pub discount: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub n_update: usize,
    pub kl_weight: f64,
    pub ema_rho: f64,
    pub entropy_bonus: f64,
    pub online_lr_decay: f64,
    pub pretrain_epochs: usize,
    pub reset_calibrator_per_epoch: bool,
    pub reward_from_predictor: bool,
}

impl Default for AgentSection {
    fn default() -> Self {
        let c = AgentConfig::default();
        AgentSection {
            hidden_width: c.hidden_width,
            discount: c.discount,
            actor_lr: c.actor_lr,
            critic_lr: c.critic_lr,
            batch_size: c.batch_size,
            replay_capacity: c.replay_capacity,
            n_update: c.n_update,
            kl_weight: c.kl_weight,
            ema_rho: c.ema_rho,
            entropy_bonus: c.entropy_bonus,
            online_lr_decay: c.online_lr_decay,
            pretrain_epochs: c.pretrain_epochs,
            reset_calibrator_per_epoch: c.reset_calibrator_per_epoch,
            reward_from_predictor: c.reward_from_predictor,
        }
    }
}

impl AgentSection {
    pub fn to_core(&self, seed: u64, ablation: AblationFlags) -> AgentConfig {
        AgentConfig {
            hidden_width: self.hidden_width,
            discount: self.discount,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            n_update: self.n_update,
            kl_weight: self.kl_weight,
            ema_rho: self.ema_rho,
            entropy_bonus: self.entropy_bonus,
            online_lr_decay: self.online_lr_decay,
            pretrain_epochs: self.pretrain_epochs,
            seed,
            ablation,
            reset_calibrator_per_epoch: self.reset_calibrator_per_epoch,
            reward_from_predictor: self.reward_from_predictor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub delta_m: f64,
    pub delta_b: f64,
    pub gamma: f64,
    pub c_under: f64,
    pub c_over: f64,
    pub recent_window: usize,
    pub step_decay_power: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerConfig::default();
        ControllerSection {
            delta_m: c.delta_m,
            delta_b: c.delta_b,
            gamma: c.gamma,
            c_under: c.cost.c_under,
            c_over: c.cost.c_over,
            recent_window: c.recent_window,
            step_decay_power: c.step_decay_power,
        }
    }
}

impl ControllerSection {
    pub fn to_core(&self) -> Result<ControllerConfig, ConfigError> {
        let cost = CostModel::new(self.c_under, self.c_over)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cfg = ControllerConfig {
            delta_m: self.delta_m,
            delta_b: self.delta_b,
            gamma: self.gamma,
            cost,
            recent_window: self.recent_window,
            step_decay_power: self.step_decay_power,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    Picrl,
    Naive,
    Conformal,
    Ts,
    Rule,
    Oracle,
}

impl PolicyChoice {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyChoice::Picrl => "picrl",
            PolicyChoice::Naive => "naive",
            PolicyChoice::Conformal => "conformal",
            PolicyChoice::Ts => "ts",
            PolicyChoice::Rule => "rule",
            PolicyChoice::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "picrl" => Ok(PolicyChoice::Picrl),
            "naive" => Ok(PolicyChoice::Naive),
            "conformal" => Ok(PolicyChoice::Conformal),
            "ts" => Ok(PolicyChoice::Ts),
            "rule" => Ok(PolicyChoice::Rule),
            "oracle" => Ok(PolicyChoice::Oracle),
            other => Err(ConfigError::Invalid(format!(
                "unknown policy `{other}`; expected naive|conformal|ts|rule|picrl|oracle"
            ))),
        }
    }
}

/// Ablation switch names A1..A7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationChoice {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
}

impl AblationChoice {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(AblationChoice::A1),
            "A2" => Ok(AblationChoice::A2),
            "A3" => Ok(AblationChoice::A3),
            "A4" => Ok(AblationChoice::A4),
            "A5" => Ok(AblationChoice::A5),
            "A6" => Ok(AblationChoice::A6),
            "A7" => Ok(AblationChoice::A7),
            other => Err(ConfigError::Invalid(format!(
                "unknown ablation `{other}`; expected A1..A7"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationChoice::A1 => "A1",
            AblationChoice::A2 => "A2",
            AblationChoice::A3 => "A3",
            AblationChoice::A4 => "A4",
            AblationChoice::A5 => "A5",
            AblationChoice::A6 => "A6",
            AblationChoice::A7 => "A7",
        }
    }

    pub fn flags(&self) -> AblationFlags {
        let mut f = AblationFlags::default();
        match self {
            AblationChoice::A1 => f.no_uncertainty = true,
            AblationChoice::A2 => f.no_censored_reward = true,
            AblationChoice::A3 => f.no_pessimism = true,
            AblationChoice::A4 => f.no_risk_buffer = true,
            AblationChoice::A5 => f.no_kl = true,
            AblationChoice::A6 => f.no_ema = true,
            AblationChoice::A7 => f.skip_pretrain = true,
        }
        f
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub policy: PolicyChoice,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    #[serde(default)]
    pub ablation: Option<AblationChoice>,
    /// Truncate the online run to this many test steps.
    #[serde(default)]
    pub online_steps: Option<usize>,
    /// Reuse checkpoints already present in the output directory.
    #[serde(default)]
    pub reuse_predictor: bool,
    #[serde(default = "d_true")]
    pub write_step_logs: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workload: WorkloadSection,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub controller: ControllerSection,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_env_overrides();
        Ok(cfg)
    }

    /// `PICRL_SEED`, when set, replaces the whole seed list.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(v) = std::env::var("PICRL_SEED") {
            if let Ok(seed) = v.trim().parse::<u64>() {
                self.experiment.seeds = vec![seed];
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.experiment.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds list is empty".into()));
        }
        let s = &self.workload.split;
        let split = SplitSpec {
            train_frac: s.train_frac,
            val_frac: s.val_frac,
            test_frac: s.test_frac,
        };
        split
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(d) = &self.workload.drift {
            if !(d.at_fraction > 0.0 && d.at_fraction < 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "drift at_fraction {} must lie in (0, 1)",
                    d.at_fraction
                )));
            }
        }
        self.controller.to_core().map(|_| ())?;
        self.predictor
            .to_core(0)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Canonical resolved-JSON form; field order is declaration order.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a over the canonical resolved form.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.resolved_json().bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn ablation_flags(&self) -> AblationFlags {
        self.experiment
            .ablation
            .map(|a| a.flags())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "workload": {"source": {"kind": "bursty", "length": 2000, "target_pmr": 5.2, "target_cv": 0.87}},
        "experiment": {"policy": "picrl", "seeds": [1, 2], "out_dir": "runs/x"}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.predictor.window_len, 32);
        assert_eq!(cfg.agent.n_update, 16);
        assert_eq!(cfg.controller.delta_m, 0.005);
        assert_eq!(cfg.workload.split.train_frac, 0.6);
        assert_eq!(cfg.experiment.policy, PolicyChoice::Picrl);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace(r#""seeds": [1, 2]"#, r#""seeds": [1, 2], "typo_key": 3"#);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad2 = MINIMAL.replace(
            r#""workload": {"#,
            r#""workload": {"mystery": 1, "#,
        );
        assert!(ExperimentConfig::from_json(&bad2).is_err());
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let bad = MINIMAL.replace(r#""seeds": [1, 2]"#, r#""seeds": []"#);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut broken = cfg.clone();
        broken.controller.c_under = 0.5; // must exceed c_over
        assert!(broken.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let b = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.agent.kl_weight = 0.2;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn resolved_json_round_trips() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let b = ExperimentConfig::from_json(&a.resolved_json()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ablation_choices_map_to_flags() {
        assert!(AblationChoice::parse("a3").unwrap().flags().no_pessimism);
        assert!(AblationChoice::parse("A7").unwrap().flags().skip_pretrain);
        assert!(AblationChoice::parse("A9").is_err());
    }
}
