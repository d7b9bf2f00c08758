use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::TaskId;
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::rater::{CorrectionMethod, CrossValConfig, DEFAULT_MIN_SAMPLES};
use crate::semisup::TrimPolicy;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

/// Hidden layer sizes shared by every model name.
///
/// `single` and `multi` run each task through `trunk_layers ++
/// branch_layers`; the `multi,split` family shares the first
/// `split_index` trunk layers and gives every task its own copy of the rest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub trunk_layers: Vec<usize>,
    /// Defaults to half the trunk depth, rounded down.
    pub split_index: Option<usize>,
    pub branch_layers: Vec<usize>,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            trunk_layers: vec![64, 64],
            split_index: None,
            branch_layers: vec![32],
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaterConfig {
    pub method: CorrectionMethod,
    pub min_samples: usize,
    /// Clip corrected ratings to the 1–5 scale.
    pub clip: bool,
}

impl Default for RaterConfig {
    fn default() -> Self {
        Self {
            method: CorrectionMethod::Bias,
            min_samples: DEFAULT_MIN_SAMPLES,
            clip: false,
        }
    }
}

/// Everything a command can be configured with; one TOML section per
/// module.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub semisup: TrimPolicy,
    pub rater: RaterConfig,
    pub crossval: CrossValConfig,
}

fn line_of(text: &str, offset: usize) -> u64 {
    text[..offset.min(text.len())].matches('\n').count() as u64 + 1
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of(text, s.start));
            Error::parse(path, line, e.message().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serialises to TOML")
    }

    /// Uses `seed` for every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.model.init_seed = seed;
        self.train.seed = seed;
        self.crossval.seed = seed;
    }
}

/// Model names as they appear in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Single,
    Multi,
    MultiSplit,
    MultiSplitWeighted,
    MultiSplitSemi,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Single,
        ModelKind::Multi,
        ModelKind::MultiSplit,
        ModelKind::MultiSplitWeighted,
        ModelKind::MultiSplitSemi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Single => "single",
            ModelKind::Multi => "multi",
            ModelKind::MultiSplit => "multi,split",
            ModelKind::MultiSplitWeighted => "multi,split,W",
            ModelKind::MultiSplitSemi => "multi,split,semi",
        }
    }

    /// One architecture per trained model: one per task for `single`,
    /// otherwise a single multi-output model.
    pub fn architectures(self, cfg: &ModelConfig, input_dim: usize, tasks: &[TaskId]) -> Result<Vec<Architecture>> {
        let full: Vec<usize> = cfg.trunk_layers.iter().chain(&cfg.branch_layers).copied().collect();
        let archs = match self {
            ModelKind::Single => tasks
                .iter()
                .map(|t| Architecture {
                    input_dim,
                    split_index: full.len(),
                    trunk_layers: full.clone(),
                    branch_layers: Vec::new(),
                    tasks: vec![t.clone()],
                })
                .collect(),
            ModelKind::Multi => vec![Architecture {
                input_dim,
                split_index: full.len(),
                trunk_layers: full,
                branch_layers: Vec::new(),
                tasks: tasks.to_vec(),
            }],
            _ => vec![Architecture {
                input_dim,
                trunk_layers: cfg.trunk_layers.clone(),
                split_index: cfg.split_index.unwrap_or(cfg.trunk_layers.len() / 2),
                branch_layers: cfg.branch_layers.clone(),
                tasks: tasks.to_vec(),
            }],
        };
        for a in &archs {
            a.validate()?;
        }
        Ok(archs)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}
