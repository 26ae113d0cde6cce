use std::path::{Path, PathBuf};

use anyhow::Context;
use prevsynth::diagnostics::{RefitConfig, REFERENCE_SOURCES};
use prevsynth::inference::{ModelConfig, SamplerConfig};
use prevsynth::observation::{BiasStructure, ObservationSet};
use prevsynth::{CensusTable, Error};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Census CSV; the built-in reference table when absent.
    #[serde(default)]
    pub census: Option<PathBuf>,
    pub observations: PathBuf,
    #[serde(default)]
    pub sources: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub bias_structure: BiasStructure,
    #[serde(default)]
    pub allow_prior_only: bool,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Sources forming the biased part of the deviance split.
    #[serde(default = "default_reference")]
    pub reference: Vec<String>,
    #[serde(skip)]
    pub base: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    1
}

fn default_reference() -> Vec<String> {
    REFERENCE_SOURCES.iter().map(|s| s.to_string()).collect()
}

/// Validated inputs ready for fitting.
pub struct Loaded {
    pub census: CensusTable,
    pub observations: ObservationSet,
}

/// Outcome of validation: hard errors plus the identifiability verdict.
pub struct Validation {
    pub loaded: Option<Loaded>,
    pub errors: Vec<Error>,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: RunManifest = toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig { seed: self.seed, ..self.sampler.clone() }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { structure: self.bias_structure, ..self.model }
    }

    pub fn refit_config(&self) -> RefitConfig {
        RefitConfig { model: self.model_config(), sampler: self.sampler_config(), reference: self.reference.clone() }
    }

    /// Reads and checks every input before any sampling. Level multipliers
    /// are applied to the returned observations.
    pub fn validate(&self) -> Validation {
        let mut errors = Vec::new();
        if let Err(e) = self.sampler_config().validate() {
            errors.push(e);
        }
        let census = match &self.census {
            Some(p) => CensusTable::from_csv_path(self.resolve(p)).map_err(|e| context(e, p)),
            None => Ok(CensusTable::reference()),
        };
        let census = census.map_err(|e| errors.push(e)).ok();
        let obs = std::fs::File::open(self.resolve(&self.observations))
            .map_err(Error::from)
            .and_then(ObservationSet::read_csv)
            .map_err(|e| context(e, &self.observations));
        let mut obs = match obs {
            Ok((set, bad)) => {
                errors.extend(bad);
                Some(set)
            }
            Err(e) => {
                errors.push(e);
                None
            }
        };
        if let (Some(set), Some(p)) = (obs.as_mut(), &self.sources) {
            let r = std::fs::read_to_string(self.resolve(p)).map_err(Error::from).and_then(|t| set.load_sources_toml(&t));
            if let Err(e) = r {
                errors.push(context(e, p));
            }
        }
        if let Some(set) = obs.as_mut() {
            if set.is_empty() {
                if !self.allow_prior_only {
                    errors.push(Error::Invalid("no observations; pass --allow-prior-only for a prior-only fit".into()));
                }
            } else if let Err(e) = set.check_identifiability(self.bias_structure) {
                errors.push(e);
            }
            if let Err(e) = set.apply_level_multipliers() {
                errors.push(e);
            }
        }
        let loaded = match (census, obs) {
            (Some(census), Some(observations)) if errors.is_empty() => Some(Loaded { census, observations }),
            _ => None,
        };
        Validation { loaded, errors }
    }
}

fn context(e: Error, p: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Invalid(format!("{}: {io}", p.display())),
        e => e,
    }
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            census: None,
            observations: PathBuf::from("observations.csv"),
            sources: None,
            out: default_out(),
            seed: default_seed(),
            bias_structure: BiasStructure::default(),
            allow_prior_only: false,
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            reference: default_reference(),
            base: PathBuf::new(),
        }
    }
}
