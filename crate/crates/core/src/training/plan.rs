//! Training strategies and their stage schedules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optimizer::{OptimizerConfig, PlateauConfig};
use crate::error::{Error, Result};
use crate::losses::{ActiveTerms, Lambdas};
use crate::model::{ArchConfig, Partition, PartitionSet};

/// Training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Strategy {
    /// Joint branches, then the mapping cell alone, then everything with the
    /// correlation loss.
    #[default]
    #[serde(rename = "three_step")]
    ThreeStep,
    /// Everything from scratch with the full objective.
    #[serde(rename = "TS1")]
    Ts1,
    /// As `three_step` but with the mapping cell frozen in the last stage.
    #[serde(rename = "TS2")]
    Ts2,
    #[serde(rename = "single_tool")]
    SingleTool,
    #[serde(rename = "single_phase")]
    SinglePhase,
    /// Joint branches without the correlation loss throughout.
    #[serde(rename = "mtrcnet_no_cl")]
    NoCorrelation,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::ThreeStep,
        Strategy::Ts1,
        Strategy::Ts2,
        Strategy::SingleTool,
        Strategy::SinglePhase,
        Strategy::NoCorrelation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ThreeStep => "three_step",
            Strategy::Ts1 => "TS1",
            Strategy::Ts2 => "TS2",
            Strategy::SingleTool => "single_tool",
            Strategy::SinglePhase => "single_phase",
            Strategy::NoCorrelation => "mtrcnet_no_cl",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Epoch budget of the three steps; other strategies reuse these numbers so
/// every strategy trains its branches for the same number of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageEpochs {
    pub joint: usize,
    pub mapping: usize,
    pub correlation: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        Self {
            joint: 12,
            mapping: 4,
            correlation: 8,
        }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub seed: u64,
    pub epochs: StageEpochs,
    pub batch_size: usize,
    /// Step between training clip windows.
    pub clip_stride: usize,
    /// Training videos held out for the plateau schedule.
    pub val_videos: usize,
    pub deterministic: bool,
    pub lambdas: Lambdas,
    pub optimizer: OptimizerConfig,
    pub plateau: PlateauConfig,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::ThreeStep,
            seed: 0,
            epochs: StageEpochs::default(),
            batch_size: 16,
            clip_stride: 2,
            val_videos: 2,
            deterministic: false,
            lambdas: Lambdas::default(),
            optimizer: OptimizerConfig::default(),
            plateau: PlateauConfig::default(),
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.lambdas.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.clip_stride == 0 {
            return Err(Error::config("batch_size and clip_stride must be positive"));
        }
        if self.plateau.patience == 0 {
            return Err(Error::config("plateau patience must be at least 1"));
        }
        TrainPlan::from_config(self).validate()
    }
}

/// One stage: epochs, frozen partitions and active loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub epochs: usize,
    pub frozen: PartitionSet,
    pub active: ActiveTerms,
}

impl StageSpec {
    pub fn trainable(&self) -> PartitionSet {
        self.frozen.complement()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.trainable();
        let a = self.active;
        if !(a.tool || a.phase || a.correlation || a.mapped_tool) {
            return Err(Error::config(format!("stage {}: no active loss term", self.name)));
        }
        if t.iter().next().is_none() {
            return Err(Error::config(format!("stage {}: every partition frozen", self.name)));
        }
        if a.mapped_tool && !t.contains(Partition::MappingCell) {
            return Err(Error::config(format!(
                "stage {}: mapped-prior loss with a frozen mapping cell",
                self.name
            )));
        }
        Ok(())
    }
}

/// Resolved stage sequence of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub strategy: Strategy,
    pub stages: Vec<StageSpec>,
    pub clip_len: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub plateau: PlateauConfig,
}

fn stage(name: &str, epochs: usize, frozen: &[Partition], active: ActiveTerms) -> StageSpec {
    StageSpec {
        name: name.into(),
        epochs,
        frozen: PartitionSet::of(frozen),
        active,
    }
}

impl TrainPlan {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        use Partition::*;
        let e = cfg.epochs;
        let step1 = stage("joint", e.joint, &[MappingCell], ActiveTerms::JOINT);
        let step2 = stage("mapping", e.mapping, &[Backbone, ToolHead, PhaseHead], ActiveTerms::MAPPING_ONLY);
        let stages = match cfg.strategy {
            Strategy::ThreeStep => vec![step1, step2, stage("correlation", e.correlation, &[], ActiveTerms::FULL)],
            Strategy::Ts2 => vec![
                step1,
                step2,
                stage("correlation", e.correlation, &[MappingCell], ActiveTerms::FULL),
            ],
            Strategy::Ts1 => vec![stage("full", e.joint + e.correlation, &[], ActiveTerms::FULL)],
            Strategy::NoCorrelation => vec![
                step1,
                stage("joint_continued", e.correlation, &[MappingCell], ActiveTerms::JOINT),
            ],
            Strategy::SingleTool => vec![
                stage("tool", e.joint, &[PhaseHead, MappingCell], ActiveTerms::TOOL_ONLY),
                stage("tool_continued", e.correlation, &[PhaseHead, MappingCell], ActiveTerms::TOOL_ONLY),
            ],
            Strategy::SinglePhase => vec![
                stage("phase", e.joint, &[ToolHead, MappingCell], ActiveTerms::PHASE_ONLY),
                stage("phase_continued", e.correlation, &[ToolHead, MappingCell], ActiveTerms::PHASE_ONLY),
            ],
        };
        Self {
            strategy: cfg.strategy,
            stages,
            clip_len: cfg.arch.clip_len,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            plateau: cfg.plateau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stages.iter().try_for_each(StageSpec::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(s: Strategy) -> TrainPlan {
        TrainPlan::from_config(&TrainConfig {
            strategy: s,
            ..Default::default()
        })
    }

    #[test]
    fn three_step_layout() {
        let p = plan(Strategy::ThreeStep);
        assert_eq!(p.stages.len(), 3);
        assert!(p.stages[0].frozen.contains(Partition::MappingCell));
        assert_eq!(p.stages[1].trainable(), PartitionSet::of(&[Partition::MappingCell]));
        assert_eq!(p.stages[2].frozen, PartitionSet::EMPTY);
        assert!(p.stages[2].active.correlation);
    }

    #[test]
    fn ts2_freezes_mapping_last() {
        let p = plan(Strategy::Ts2);
        assert!(p.stages[2].frozen.contains(Partition::MappingCell));
        assert!(p.stages[2].active.correlation);
    }

    #[test]
    fn single_task_freezes_other_head() {
        let p = plan(Strategy::SinglePhase);
        assert!(p.stages.iter().all(|s| s.frozen.contains(Partition::ToolHead) && !s.active.tool));
        let p = plan(Strategy::SingleTool);
        assert!(p.stages.iter().all(|s| s.frozen.contains(Partition::PhaseHead) && !s.active.phase));
    }

    #[test]
    fn no_correlation_shares_first_stage() {
        assert_eq!(plan(Strategy::NoCorrelation).stages[0], plan(Strategy::ThreeStep).stages[0]);
    }

    #[test]
    fn every_plan_valid_and_names_parse() {
        for s in Strategy::ALL {
            plan(s).validate().unwrap();
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("two_step".parse::<Strategy>(), Err(Error::Config(_))));
        assert_eq!("ts1".parse::<Strategy>().unwrap(), Strategy::Ts1);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
    }
}
