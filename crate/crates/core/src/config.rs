//! Run configuration for the command-line pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::eval::EvalConfig;
use crate::fnc::FncConfig;
use crate::kernels::PabsKernelParams;
use crate::scica::ScicaConfig;
use crate::selection::SsfsConfig;
use crate::svm::SvmConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSettings {
    /// `fixed:all`, `fixed:<i,j,...>`, `sfs` or `ssfs`.
    pub mode: String,
    pub search: SsfsConfig,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            mode: "fixed:all".into(),
            search: SsfsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// `synthetic`, `n53`, `n105`, or a template JSON path.
    pub template: String,
    /// Feature sets to evaluate: `sm` and/or `sm+fnc`.
    pub features: Vec<String>,
    /// Use the cached cross-Gram route for kernels when it fits in memory.
    pub gram_cache: bool,
    pub synth: SynthConfig,
    pub scica: ScicaConfig,
    pub fnc: FncConfig,
    pub kernel: PabsKernelParams,
    pub svm: SvmConfig,
    pub selection: SelectionSettings,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            template: "synthetic".into(),
            features: vec!["sm".into(), "sm+fnc".into()],
            gram_cache: true,
            synth: SynthConfig::default(),
            scica: ScicaConfig::default(),
            fnc: FncConfig::default(),
            kernel: PabsKernelParams::default(),
            svm: SvmConfig::default(),
            selection: SelectionSettings::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSet {
    Sm,
    SmFnc,
}

impl FeatureSet {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sm" => Ok(Self::Sm),
            "sm+fnc" | "sm+sfnc" => Ok(Self::SmFnc),
            other => Err(Error::Config(format!("unknown feature set {other:?} (expected sm or sm+fnc)"))),
        }
    }

    pub fn use_fnc(&self) -> bool {
        matches!(self, Self::SmFnc)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sm => "sm",
            Self::SmFnc => "sm+fnc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionMode {
    FixedAll,
    Fixed(Vec<usize>),
    Sfs,
    Ssfs,
}

impl SelectionMode {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sfs" => return Ok(Self::Sfs),
            "ssfs" => return Ok(Self::Ssfs),
            "fixed:all" => return Ok(Self::FixedAll),
            _ => {}
        }
        let Some(list) = s.strip_prefix("fixed:") else {
            return Err(Error::Config(format!(
                "unknown selection {s:?} (expected fixed:all, fixed:<i,j,...>, sfs or ssfs)"
            )));
        };
        let idx = list
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("bad component list {list:?}")))?;
        if idx.is_empty() {
            return Err(Error::Config("empty component list".into()));
        }
        Ok(Self::Fixed(idx))
    }

    /// Short tag for report labels.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::FixedAll | Self::Fixed(_) => "fixed",
            Self::Sfs => "sfs",
            Self::Ssfs => "ssfs",
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text).context(|| format!("config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.scica.validate()?;
        self.fnc.validate()?;
        self.kernel.validate()?;
        self.svm.validate()?;
        self.selection.search.validate()?;
        self.eval.validate()?;
        self.feature_sets()?;
        SelectionMode::parse(&self.selection.mode)?;
        if self.features.is_empty() {
            return Err(Error::Config("features must name at least one feature set".into()));
        }
        Ok(())
    }

    pub fn feature_sets(&self) -> Result<Vec<FeatureSet>> {
        self.features.iter().map(|f| FeatureSet::parse(f)).collect()
    }

    pub fn selection_mode(&self) -> Result<SelectionMode> {
        SelectionMode::parse(&self.selection.mode)
    }
}
