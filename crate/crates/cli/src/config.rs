//! Run configuration: one JSON file with a block per module.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vkrod::cell::RegimeSpec;
use vkrod::geometry::{CrossSection, MacroStrain, SectionBlock};
use vkrod::material::MaterialBlock;
use vkrod::microstructure::{realize, MicrostructureBlock, MicrostructureRealization, MicrostructureSpec};
use vkrod::rod::{BoundaryCondition, LoadSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: field `{field}` (line {line}, column {column}): {message}")]
    Parse { path: PathBuf, field: String, line: usize, column: usize, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    pub fn invalid(field: &str, e: impl std::fmt::Display) -> Self {
        Self::Invalid { field: field.to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Homogeneous material; alternative to `microstructure`.
    #[serde(default)]
    pub material: Option<MaterialBlock>,
    #[serde(default)]
    pub microstructure: Option<MicrostructureBlock>,
    #[serde(default)]
    pub section: Option<SectionBlock>,
    #[serde(default)]
    pub regime: Option<RegimeSpec>,
    #[serde(default)]
    pub load: Option<LoadSpec>,
    #[serde(default)]
    pub bc: BoundaryCondition,
    /// Precomputed effective form for `solve`.
    #[serde(default)]
    pub effective: Option<EffectiveBlock>,
    /// Path to an `effective` output file, relative to the config file.
    #[serde(default)]
    pub effective_file: Option<PathBuf>,
    #[serde(default)]
    pub rod: RodBlock,
    #[serde(default)]
    pub verify: Option<VerifyBlock>,
    #[serde(default)]
    pub birkhoff: Option<BirkhoffBlock>,
    #[serde(default)]
    pub h_list: Option<Vec<f64>>,
    #[serde(default)]
    pub output: OutputBlock,
    /// Run seed; overrides the microstructure block seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// `a0` in the ordering `(ρ, κ₁, κ₂, κ₃)`. Other keys of an `effective`
/// output file are ignored.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EffectiveBlock {
    pub a0: [[f64; 4]; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RodMethod {
    #[default]
    Shooting,
    Galerkin,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodBlock {
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    #[serde(default)]
    pub method: RodMethod,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
}

fn default_nodes() -> usize {
    1001
}

fn default_modes() -> usize {
    16
}

impl Default for RodBlock {
    fn default() -> Self {
        Self { n_nodes: default_nodes(), method: RodMethod::default(), n_modes: default_modes() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// `(ρ, κ₁, κ₂, κ₃)`
    pub macro_strain: [f64; 4],
    #[serde(default = "default_length")]
    pub length: f64,
}

fn default_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirkhoffBlock {
    pub windows: Vec<f64>,
    /// Value of the observable on each phase.
    pub observable: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Reads and parses a config file; errors carry the offending field path.
pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            path: path.to_path_buf(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}

impl RunConfig {
    pub fn microstructure_spec(&self) -> Result<MicrostructureSpec, ConfigError> {
        match (&self.material, &self.microstructure) {
            (Some(m), None) => {
                let t = m.tensor().map_err(|e| ConfigError::invalid("material", e))?;
                Ok(MicrostructureSpec { seed: self.seed.unwrap_or(0), ..MicrostructureSpec::homogeneous(t) })
            }
            (None, Some(b)) => {
                let mut spec = b.to_spec().map_err(|e| ConfigError::invalid("microstructure", e))?;
                if let Some(s) = self.seed {
                    spec.seed = s;
                }
                Ok(spec)
            }
            (Some(_), Some(_)) => Err(ConfigError::invalid("material", "give either `material` or `microstructure`, not both")),
            (None, None) => Err(ConfigError::invalid("microstructure", "missing `material` or `microstructure` block")),
        }
    }

    pub fn realization(&self) -> Result<MicrostructureRealization, ConfigError> {
        realize(&self.microstructure_spec()?).map_err(|e| ConfigError::invalid("microstructure", e))
    }

    /// Seed recorded in the outputs.
    pub fn effective_seed(&self) -> Result<u64, ConfigError> {
        Ok(self.microstructure_spec()?.seed)
    }

    pub fn cross_section(&self) -> Result<CrossSection, ConfigError> {
        let block = self.section.as_ref().ok_or_else(|| ConfigError::invalid("section", "missing block"))?;
        block.build().map_err(|e| ConfigError::invalid("section", e))
    }

    /// Regime validated against the microstructure.
    pub fn regime_for(&self, micro: &MicrostructureRealization) -> Result<RegimeSpec, ConfigError> {
        let r = self.regime.ok_or_else(|| ConfigError::invalid("regime", "missing block"))?;
        r.validate().map_err(|e| ConfigError::invalid("regime", e))?;
        r.cell_length(micro).map_err(|e| ConfigError::invalid("regime", e))?;
        Ok(r)
    }

    pub fn load_spec(&self) -> Result<LoadSpec, ConfigError> {
        let l = self.load.clone().ok_or_else(|| ConfigError::invalid("load", "missing block"))?;
        l.validate().map_err(|e| ConfigError::invalid("load", e))?;
        Ok(l)
    }

    pub fn macro_strain(&self) -> Result<(MacroStrain, f64), ConfigError> {
        let v = self.verify.as_ref().ok_or_else(|| ConfigError::invalid("verify", "missing block"))?;
        if v.macro_strain.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::invalid("verify.macro_strain", "entries must be finite"));
        }
        if !(v.length > 0.0 && v.length.is_finite()) {
            return Err(ConfigError::invalid("verify.length", "must be positive"));
        }
        Ok((MacroStrain::from_vector(v.macro_strain), v.length))
    }

    pub fn h_list(&self, cli: Option<&[f64]>) -> Result<Vec<f64>, ConfigError> {
        let list = match cli {
            Some(l) => l.to_vec(),
            None => self.h_list.clone().ok_or_else(|| ConfigError::invalid("h_list", "missing (config or --h-list)"))?,
        };
        if list.is_empty() {
            return Err(ConfigError::invalid("h_list", "empty"));
        }
        if list.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(ConfigError::invalid("h_list", "entries must be positive"));
        }
        if list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(ConfigError::invalid("h_list", "must be strictly decreasing"));
        }
        Ok(list)
    }
}
