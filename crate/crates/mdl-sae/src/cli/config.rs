//! TOML run configurations for the train and sweep commands.

use serde::Deserialize;

use crate::sae::SaeConfig;
use crate::sweep::SweepPlan;

/// `train` run file: a single `[sae]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub sae: SaeConfig,
}

fn default_max_parallel() -> usize {
    1
}

/// `sweep` plan file: tolerance, parallelism, and candidate tables.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlanConfig {
    pub epsilon: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    pub candidates: Vec<SaeConfig>,
}

impl SweepPlanConfig {
    pub fn into_plan(self) -> SweepPlan {
        SweepPlan {
            epsilon: self.epsilon,
            candidates: self.candidates,
            max_parallel: self.max_parallel,
        }
    }
}

pub fn parse_train_config(text: &str) -> Result<TrainRunConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn parse_sweep_plan(text: &str) -> Result<SweepPlanConfig, toml::de::Error> {
    toml::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::ActivationRule;

    #[test]
    fn parses_minimal_train_config() {
        let cfg = parse_train_config(
            r#"
            [sae]
            input_dim = 4
            dict_size = 8
            k = 2
            activation_rule = "batch_topk"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.sae.input_dim, 4);
        assert_eq!(cfg.sae.dict_size, 8);
        assert_eq!(cfg.sae.activation_rule, ActivationRule::BatchTopK);
        // defaults fill in
        assert_eq!(cfg.sae.batch_size, 256);
        assert_eq!(cfg.sae.patience, 10);
        assert!(cfg.sae.validate().is_ok());
    }

    #[test]
    fn parses_sweep_plan_with_defaults() {
        let plan = parse_sweep_plan(
            r#"
            epsilon = 0.015

            [[candidates]]
            input_dim = 4
            dict_size = 8
            k = 2
            activation_rule = "topk"

            [[candidates]]
            input_dim = 4
            dict_size = 16
            k = 4
            activation_rule = "topk"
            seed = 3
            "#,
        )
        .unwrap();
        assert_eq!(plan.max_parallel, 1);
        assert_eq!(plan.candidates.len(), 2);
        assert_eq!(plan.candidates[1].seed, 3);
        assert!(plan.into_plan().validate().is_ok());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_rules() {
        assert!(parse_train_config("[sae]\ninput_dim = 4\nwidth = 9\n").is_err());
        assert!(parse_train_config(
            "[sae]\ninput_dim = 4\ndict_size = 8\nactivation_rule = \"gelu\"\n"
        )
        .is_err());
    }
}
