//! Pipeline configuration: one JSON document, every field optional except
//! the seed for commands that train or generate.

use std::fmt;
use std::path::{Path, PathBuf};

use agsp_core::assembly::CHANGE_PALETTE;
use agsp_core::parcel::ParcelParams;
use agsp_core::scene::{TerrainThresholds, DEFAULT_ROAD_WIDTH};
use agsp_nets::bdcn::BdcnConfig;
use agsp_nets::ccnet::ScdConfig;
use agsp_tensor::init::fnv1a64;
use agsp_tensor::optim::SgdConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    /// Existing scene directory; a synthetic scene is generated when absent.
    pub scene_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub scene: SceneConfig,
    pub parcel: ParcelParams,
    /// Fused pieces below this many cells join a neighbour.
    pub fuse_min_area: usize,
    pub edge: TrainSection<BdcnConfig>,
    pub scd: TrainSection<ScdConfig>,
    pub ablations: Vec<Ablation>,
    /// RGB preview colour per change category.
    pub palette: [[u8; 3]; 7],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            scene_dir: None,
            synth: SynthConfig::default(),
            scene: SceneConfig::default(),
            parcel: ParcelParams::default(),
            fuse_min_area: 25,
            edge: TrainSection {
                net: BdcnConfig::default(),
                epochs: 12,
                batch: 4,
                sgd: SgdConfig::default(),
            },
            scd: TrainSection {
                net: ScdConfig::default(),
                epochs: 30,
                batch: 4,
                sgd: SgdConfig::default(),
            },
            ablations: vec![Ablation::Full],
            palette: CHANGE_PALETTE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub terrain: TerrainThresholds,
    /// Full road corridor width in map units.
    pub road_width: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            terrain: TerrainThresholds::default(),
            road_width: DEFAULT_ROAD_WIDTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection<N> {
    #[serde(default)]
    pub net: N,
    pub epochs: usize,
    pub batch: usize,
    #[serde(default)]
    pub sgd: SgdConfig,
}

/// Module combinations compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "BASE")]
    Base,
    #[serde(rename = "BASE+AGS")]
    BaseAgs,
    #[serde(rename = "BASE+BDCN")]
    BaseBdcn,
    #[serde(rename = "BASE+AGS+BDCN")]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Base, Ablation::BaseAgs, Ablation::BaseBdcn, Ablation::Full];

    pub fn ags(self) -> bool {
        matches!(self, Ablation::BaseAgs | Ablation::Full)
    }

    pub fn bdcn(self) -> bool {
        matches!(self, Ablation::BaseBdcn | Ablation::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Base => "BASE",
            Ablation::BaseAgs => "BASE+AGS",
            Ablation::BaseBdcn => "BASE+BDCN",
            Ablation::Full => "BASE+AGS+BDCN",
        }
    }

    /// Directory-safe name.
    pub fn slug(self) -> &'static str {
        match self {
            Ablation::Base => "base",
            Ablation::BaseAgs => "base_ags",
            Ablation::BaseBdcn => "base_bdcn",
            Ablation::Full => "base_ags_bdcn",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.edge.net.sem.validate()?;
        self.scd.net.validate()?;
        for (name, s) in [("edge", (self.edge.epochs, self.edge.batch, self.edge.sgd)), ("scd", (self.scd.epochs, self.scd.batch, self.scd.sgd))] {
            let (epochs, batch, sgd) = s;
            if epochs == 0 || batch == 0 {
                return Err(CliError::Config(format!("{name}: epochs and batch must be positive")));
            }
            if !(sgd.lr >= 0.0 && sgd.lr.is_finite() && (0.0..1.0).contains(&sgd.momentum) && sgd.weight_decay >= 0.0) {
                return Err(CliError::Config(format!("{name}: invalid optimizer settings")));
            }
        }
        if !(self.parcel.threshold > 0.0 && self.parcel.threshold < 1.0) {
            return Err(CliError::Config("parcel.threshold must lie in (0, 1)".into()));
        }
        if !(self.scene.road_width > 0.0) {
            return Err(CliError::Config("scene.road_width must be positive".into()));
        }
        if self.ablations.is_empty() {
            return Err(CliError::Config("ablations must name at least one configuration".into()));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))
    }
}

/// Seed of a named stage, derived from the run seed.
pub fn stage_seed(seed: u64, name: &str) -> u64 {
    fnv1a64(format!("{seed}/{name}").as_bytes())
}

/// Stable hash of a serializable value, used to tell whether a finished
/// stage was produced with the same settings.
pub fn fingerprint(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    format!("{:016x}", fnv1a64(&bytes))
}
