use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::DegradeSpec;
use crate::error::{Error, Result};
use crate::evalkit::{FtlParams, DEFAULT_MAX_EVAL_VOXELS};
use crate::labeler::LabelParams;
use crate::patchflow::DEFAULT_PATCH_SIZE;
use crate::postproc::SigmaGrid;
use crate::scorer::PcaSpec;
use crate::volgrid::PhantomSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Takes part in the cross-validation folds.
    #[default]
    Train,
    /// Held out; evaluated by degradation sweeps.
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterSpec {
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    #[serde(default = "default_gap")]
    pub gap: f64,
}

fn default_gap() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VolumeSource {
    /// Volume on disk. Without `labels`, pores come from the labeler stage.
    File {
        volume: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
    /// Synthetic volume; `scatter` adds random pores seeded by the phantom seed.
    Phantom {
        spec: PhantomSpec,
        #[serde(default)]
        scatter: Option<ScatterSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub name: String,
    #[serde(default)]
    pub role: Role,
    pub source: VolumeSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScorerKind {
    Pca,
    Identity,
    /// External scores; `{name}` in the templates is replaced by the roster name.
    Import {
        score_template: String,
        #[serde(default)]
        recon_template: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerStage {
    pub kind: ScorerKind,
    #[serde(default)]
    pub pca: PcaSpec,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_patch() -> usize {
    DEFAULT_PATCH_SIZE
}
fn default_stride() -> usize {
    DEFAULT_PATCH_SIZE / 2
}

impl Default for ScorerStage {
    fn default() -> Self {
        ScorerStage {
            kind: ScorerKind::Pca,
            pca: PcaSpec::default(),
            patch_size: default_patch(),
            stride: default_stride(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocStage {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub sigma_grid: SigmaGrid,
    /// Restrict the fitting objective to the object mask.
    #[serde(default)]
    pub object_domain: bool,
}

fn yes() -> bool {
    true
}

impl Default for PostprocStage {
    fn default() -> Self {
        PostprocStage {
            enabled: true,
            sigma_grid: SigmaGrid::default(),
            object_domain: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalDomain {
    #[default]
    All,
    Object,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStage {
    #[serde(default)]
    pub domain: EvalDomain,
    #[serde(default = "default_max_voxels")]
    pub max_voxels: Option<usize>,
    /// Loss used to calibrate the binarization threshold on training volumes.
    #[serde(default = "default_ftl")]
    pub ftl: FtlParams,
    #[serde(default = "default_candidates")]
    pub threshold_candidates: usize,
    #[serde(default = "default_curve_points")]
    pub max_curve_points: usize,
}

fn default_max_voxels() -> Option<usize> {
    Some(DEFAULT_MAX_EVAL_VOXELS)
}
fn default_ftl() -> FtlParams {
    FtlParams::new(0.633, 0.1, 1.0)
}
fn default_candidates() -> usize {
    256
}
fn default_curve_points() -> usize {
    2000
}

impl Default for EvalStage {
    fn default() -> Self {
        EvalStage {
            domain: EvalDomain::All,
            max_voxels: default_max_voxels(),
            ftl: default_ftl(),
            threshold_candidates: default_candidates(),
            max_curve_points: default_curve_points(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    #[serde(default)]
    pub label: LabelParams,
    #[serde(default)]
    pub scorer: ScorerStage,
    #[serde(default)]
    pub postproc: PostprocStage,
    #[serde(default)]
    pub eval: EvalStage,
    /// Template for sweeps; fractions and seed are overridden per cell.
    #[serde(default)]
    pub degrade: DegradeSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub roster: Vec<RosterEntry>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub stages: StageConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory that relative paths resolve against; not part of the config.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_folds() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::invalid("roster is empty"));
        }
        let mut names: Vec<&str> = self.roster.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("roster names must be unique"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.roster.len()).filter(|&i| self.roster[i].role == Role::Train).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.roster.len()).filter(|&i| self.roster[i].role == Role::Test).collect()
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in).
    pub fn config_hash(&self) -> String {
        canonical_hash(self)
    }
}

pub(crate) fn canonical_hash<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&canonicalize(v)).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn canonicalize(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, canonicalize(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        other => other,
    }
}
