//! Versioned experiment configuration with TOML round-tripping.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::md::StabilityRules;
use crate::oracle::OracleSpec;
use crate::potential::{DescriptorConfig, HeadKind, ModelConfig};
use crate::train::Hyperparams;
use crate::uncertainty::Scheme;

pub const CONFIG_VERSION: u32 = 1;

/// What acquires new data: one of the four UQ schemes, or the
/// random-perturbation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Ensemble,
    Mve,
    Evidential,
    Gmm,
    Random,
}

impl SchemeChoice {
    pub fn uq_scheme(&self) -> Option<Scheme> {
        match self {
            SchemeChoice::Ensemble => Some(Scheme::Ensemble),
            SchemeChoice::Mve => Some(Scheme::Mve),
            SchemeChoice::Evidential => Some(Scheme::Evidential),
            SchemeChoice::Gmm => Some(Scheme::Gmm),
            SchemeChoice::Random => None,
        }
    }

    pub fn head(&self) -> HeadKind {
        match self {
            SchemeChoice::Mve => HeadKind::Mve,
            SchemeChoice::Evidential => HeadKind::Evidential,
            _ => HeadKind::Standard,
        }
    }

    pub fn all_uq() -> [SchemeChoice; 4] {
        [
            SchemeChoice::Ensemble,
            SchemeChoice::Mve,
            SchemeChoice::Evidential,
            SchemeChoice::Gmm,
        ]
    }
}

impl std::fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SchemeChoice::Ensemble => "ensemble",
            SchemeChoice::Mve => "mve",
            SchemeChoice::Evidential => "evidential",
            SchemeChoice::Gmm => "gmm",
            SchemeChoice::Random => "random",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SchemeChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(SchemeChoice::Ensemble),
            "mve" => Ok(SchemeChoice::Mve),
            "evidential" => Ok(SchemeChoice::Evidential),
            "gmm" => Ok(SchemeChoice::Gmm),
            "random" => Ok(SchemeChoice::Random),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub cutoff: f64,
    pub n_radial: usize,
    pub hidden: Vec<usize>,
    pub latent: usize,
    /// Ensemble size; forced to 1 for single-network schemes.
    pub members: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            cutoff: 4.0,
            n_radial: 8,
            hidden: vec![32, 32],
            latent: 16,
            members: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    pub energy_weight: f64,
    pub force_weight: f64,
    pub evidential_lambda: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            energy_weight: 0.1,
            force_weight: 1.0,
            evidential_lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSection {
    pub k_candidates: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        GmmSection {
            k_candidates: vec![1, 2, 3, 4, 5],
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvSection {
    /// Boltzmann temperature, K.
    pub temperature: f64,
    /// Ascent step length, Å.
    pub learning_rate: f64,
    pub steps: usize,
    pub init_noise: f64,
    pub dedup_threshold: f64,
    /// Ascents started per generation; the best `samples_per_generation`
    /// survive selection.
    pub candidates_per_generation: usize,
    /// Displacement scale of the random-acquisition baseline, Å.
    pub random_noise: f64,
}

impl Default for AdvSection {
    fn default() -> Self {
        AdvSection {
            temperature: 300.0,
            learning_rate: 0.01,
            steps: 60,
            init_noise: 0.01,
            dedup_threshold: 0.05,
            candidates_per_generation: 40,
            random_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MdSection {
    /// Trajectory temperatures, cycled over the batch.
    pub temperatures: Vec<f64>,
    pub trajectories: usize,
    pub dt: f64,
    pub steps: usize,
    pub stability_preset: String,
    /// Overrides the preset's energy floor when set.
    pub energy_floor: Option<f64>,
    /// Full custom rule set; replaces the preset entirely.
    pub rules: Option<StabilityRules>,
    pub thermostat_mass: Option<f64>,
}

impl Default for MdSection {
    fn default() -> Self {
        MdSection {
            temperatures: vec![300.0, 500.0, 750.0, 1000.0],
            trajectories: 20,
            dt: 0.5,
            steps: 10_000,
            stability_preset: "ammonia".into(),
            energy_floor: None,
            rules: None,
            thermostat_mass: None,
        }
    }
}

impl MdSection {
    pub fn stability_rules(&self) -> Result<StabilityRules> {
        let mut rules = match &self.rules {
            Some(custom) => custom.clone(),
            None => StabilityRules::preset(&self.stability_preset)?,
        };
        if let Some(floor) = self.energy_floor {
            rules.min_energy = Some(floor);
        }
        Ok(rules)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlSection {
    pub generations: usize,
    pub samples_per_generation: usize,
    pub initial_samples: usize,
    /// Sampling temperature of the initial low-energy dataset, K.
    pub sample_temperature: f64,
    /// Initial-dataset energy cap, kcal/mol (default barrier/5).
    pub energy_cap: Option<f64>,
    pub test_bins: usize,
    pub test_per_bin: usize,
    /// Test-ladder ceiling, kcal/mol (default 1.2 × barrier).
    pub test_ceiling: Option<f64>,
}

impl Default for AlSection {
    fn default() -> Self {
        AlSection {
            generations: 3,
            samples_per_generation: 20,
            initial_samples: 78,
            sample_temperature: 300.0,
            energy_cap: None,
            test_bins: 100,
            test_per_bin: 2,
            test_ceiling: None,
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/experiment")
}

fn default_oracle() -> OracleSpec {
    OracleSpec::inversion_default()
}

fn default_scheme() -> SchemeChoice {
    SchemeChoice::Ensemble
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeChoice,
    #[serde(default = "default_oracle")]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub training: Hyperparams,
    #[serde(default)]
    pub gmm: GmmSection,
    #[serde(default)]
    pub adversarial: AdvSection,
    #[serde(default)]
    pub md: MdSection,
    #[serde(default)]
    pub al: AlSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.al.generations == 0 {
            return Err(Error::Config("al.generations must be >= 1".into()));
        }
        if self.scheme == SchemeChoice::Ensemble && self.model.members < 2 {
            return Err(Error::Config(
                "ensemble scheme needs model.members >= 2".into(),
            ));
        }
        self.md.stability_rules()?;
        if self.md.temperatures.is_empty() {
            return Err(Error::Config("md.temperatures must not be empty".into()));
        }
        if self.adversarial.candidates_per_generation < self.al.samples_per_generation {
            return Err(Error::Config(
                "adversarial.candidates_per_generation must cover al.samples_per_generation"
                    .into(),
            ));
        }
        self.model_config()?.validate()
    }

    /// The concrete model architecture for this scheme and oracle.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let species = self.oracle.species().iter().map(|&(z, _)| z).collect();
        let members = if self.scheme == SchemeChoice::Ensemble {
            self.model.members
        } else {
            1
        };
        Ok(ModelConfig {
            descriptor: DescriptorConfig::new(self.model.cutoff, self.model.n_radial, species)?,
            hidden: self.model.hidden.clone(),
            latent: self.model.latent,
            head: self.scheme.head(),
            members,
        })
    }

    pub fn loss_spec(&self) -> crate::train::LossSpec {
        crate::train::LossSpec {
            kind: crate::train::LossKind::for_head(self.scheme.head()),
            energy_weight: self.loss.energy_weight,
            force_weight: self.loss.force_weight,
            evidential_lambda: self.loss.evidential_lambda,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
