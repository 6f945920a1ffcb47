//! Experiment engine: configuration, the generational active-learning
//! loop, scheme comparison, and report emission.

mod al_loop;
mod config;
mod report;

pub use al_loop::{prepare_shared_data, run_al_loop, run_al_loop_with_data};
pub use config::{
    AdvSection, AlSection, ExperimentConfig, GmmSection, MdSection, ModelSection, SchemeChoice,
    CONFIG_VERSION,
};
pub use report::{
    compare_schemes, comparison_summary, emit_report, ComparisonRow, ComparisonTable,
};

use serde::{Deserialize, Serialize};

use crate::gmm::KSelection;
use crate::metrics::MetricReport;

/// Derive a child seed from the experiment seed, a stage tag, and an index.
pub fn subseed(base: u64, tag: &str, k: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(k.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub provenance: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajStat {
    pub index: usize,
    pub temperature: f64,
    pub stable_steps: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub fraction: f64,
    pub mean_stable_time_fs: f64,
    pub trajectories: Vec<TrajStat>,
}

/// Everything recorded about one generation. Wall-clock fields are
/// excluded from the serialized record so reruns are byte-identical;
/// they are persisted separately in `timing.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub config_hash: String,
    pub scheme: SchemeChoice,
    /// Training-set lineage at this generation (ids plus provenance).
    pub manifest: Vec<ManifestEntry>,
    pub model_file: String,
    pub gmm_file: Option<String>,
    pub k_selection: Option<KSelection>,
    /// None for the random-acquisition baseline (it has no U).
    pub metrics: Option<MetricReport>,
    /// Energy MAE on the test ladder, kcal/mol.
    pub energy_mae: f64,
    /// Force MAE on the test ladder, kcal/mol/Å.
    pub force_mae: f64,
    /// Per-member force MAE (ensemble scheme only).
    pub member_force_maes: Vec<f64>,
    pub stability: StabilitySummary,
    /// Ids of samples acquired after this generation's evaluation.
    pub new_samples: Vec<String>,
    pub new_sample_energies: Vec<f64>,
    /// Uniform 1 kcal/mol bins over the new samples: (low edge, count).
    pub energy_histogram: Vec<(f64, usize)>,
    #[serde(skip)]
    pub train_wall_time_s: f64,
    #[serde(skip)]
    pub md_wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenTiming {
    pub generation: usize,
    pub train_wall_time_s: f64,
    pub md_wall_time_s: f64,
}
