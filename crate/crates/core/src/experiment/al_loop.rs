//! The generational active-learning loop.
//!
//! Each generation trains from scratch on the cumulative dataset,
//! evaluates uncertainty metrics on the fixed test ladder, measures MD
//! stability, acquires new oracle-labeled samples (adversarially or at
//! random), and persists every artifact under `out_dir/gen_XX/`.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adversarial::{
    adversarial_ascend, select_batch, AdversarialConfig, AdversarialResult, SchemeObjective,
};
use crate::data::{self, LabeledSample, Structure};
use crate::error::{Error, Result};
use crate::experiment::{
    subseed, ExperimentConfig, GenTiming, GenerationRecord, ManifestEntry, SchemeChoice,
    StabilitySummary, TrajStat,
};
use crate::gmm::{select_k, GmmModel};
use crate::md::{self, MdConfig, MdEnsemble, Trajectory};
use crate::metrics::{self, Calibration, EvalPair, MetricConfig, MetricReport};
use crate::oracle;
use crate::potential::{
    EnsembleMeanForceField, HeadOutput, MemberForceField, ModelBundle, PotentialOutput,
};
use crate::train::{self, Hyperparams, TrainReport};
use crate::uncertainty::{
    ensemble_uncertainty, evidential_uncertainty, gmm_uncertainty, mve_uncertainty, Scheme,
    UncertaintyRecord,
};

/// Initial dataset and test ladder shared by every scheme under one seed.
pub fn prepare_shared_data(
    cfg: &ExperimentConfig,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let initial = oracle::generate_initial_dataset(
        &cfg.oracle,
        cfg.al.initial_samples,
        cfg.al.sample_temperature,
        subseed(cfg.seed, "initial-data", 0),
        cfg.al.energy_cap,
    )?;
    let ladder = oracle::generate_test_ladder(
        &cfg.oracle,
        cfg.al.test_bins,
        cfg.al.test_per_bin,
        subseed(cfg.seed, "test-ladder", 0),
        cfg.al.test_ceiling,
    )?;
    Ok((initial, ladder))
}

pub fn run_al_loop(cfg: &ExperimentConfig) -> Result<Vec<GenerationRecord>> {
    let (initial, ladder) = prepare_shared_data(cfg)?;
    run_al_loop_with_data(cfg, &initial, &ladder)
}

/// Scheme-specific behavior wrapped around the shared bundle.
struct SchemeRuntime<'a> {
    cfg: &'a ExperimentConfig,
    bundle: ModelBundle,
    gmm: Option<GmmModel>,
}

impl SchemeRuntime<'_> {
    /// The prediction the scheme reports: ensemble mean, or member 0.
    fn predict(&self, s: &Structure, id: &str) -> Result<PotentialOutput> {
        if self.cfg.scheme == SchemeChoice::Ensemble {
            let outs = self.member_outputs(s, id)?;
            let m = outs.len() as f64;
            let mut energy = 0.0;
            let mut forces = vec![[0.0f64; 3]; s.len()];
            for o in &outs {
                energy += o.energy / m;
                for (acc, f) in forces.iter_mut().zip(&o.forces) {
                    for k in 0..3 {
                        acc[k] += f[k] / m;
                    }
                }
            }
            Ok(PotentialOutput {
                energy,
                forces,
                latent: outs[0].latent.clone(),
                head: HeadOutput::Standard,
            })
        } else {
            self.bundle.predict(0, s, id)
        }
    }

    fn member_outputs(&self, s: &Structure, id: &str) -> Result<Vec<PotentialOutput>> {
        (0..self.bundle.member_count())
            .map(|m| self.bundle.predict(m, s, id))
            .collect()
    }

    /// Structure-level uncertainty with scheme-specific auxiliaries.
    fn uncertainty(&self, s: &Structure, id: &str) -> Result<Option<UncertaintyRecord>> {
        let scheme = match self.cfg.scheme.uq_scheme() {
            Some(s) => s,
            None => return Ok(None),
        };
        let record = match scheme {
            Scheme::Ensemble => {
                let outs = self.member_outputs(s, id)?;
                let (sigma2_e, sigma2_f) = ensemble_uncertainty(&outs)?;
                UncertaintyRecord {
                    structure_id: id.into(),
                    scheme,
                    u: sigma2_f,
                    aux1: Some(sigma2_e),
                    aux2: None,
                }
            }
            Scheme::Mve => {
                let out = self.bundle.predict(0, s, id)?;
                UncertaintyRecord {
                    structure_id: id.into(),
                    scheme,
                    u: mve_uncertainty(&out)?,
                    aux1: None,
                    aux2: None,
                }
            }
            Scheme::Evidential => {
                let out = self.bundle.predict(0, s, id)?;
                let (aleatoric, epistemic) = evidential_uncertainty(&out)?;
                UncertaintyRecord {
                    structure_id: id.into(),
                    scheme,
                    u: epistemic,
                    aux1: Some(aleatoric),
                    aux2: None,
                }
            }
            Scheme::Gmm => {
                let gmm = self
                    .gmm
                    .as_ref()
                    .ok_or_else(|| Error::Config("gmm model missing".into()))?;
                let out = self.bundle.predict(0, s, id)?;
                UncertaintyRecord {
                    structure_id: id.into(),
                    scheme,
                    u: gmm_uncertainty(gmm, &out)?,
                    aux1: None,
                    aux2: None,
                }
            }
        };
        Ok(Some(record))
    }
}

fn split_val<'a>(
    data: &'a [LabeledSample],
    seed: u64,
) -> (Vec<&'a LabeledSample>, Vec<&'a LabeledSample>) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * 0.1).round() as usize)
        .max(2)
        .min(data.len() / 2);
    let (val, train) = idx.split_at(n_val);
    (
        train.iter().map(|&i| &data[i]).collect(),
        val.iter().map(|&i| &data[i]).collect(),
    )
}

/// Per-structure evaluation pairs: ε is the per-structure force RMSE,
/// signed per-component residuals ride along for the calibration curve.
fn eval_pairs(
    runtime: &SchemeRuntime<'_>,
    samples: &[&LabeledSample],
) -> Result<(Vec<EvalPair>, Vec<UncertaintyRecord>)> {
    let mut pairs = Vec::with_capacity(samples.len());
    let mut records = Vec::new();
    for sample in samples {
        let out = runtime.predict(&sample.structure, &sample.id)?;
        let mut sq = 0.0;
        let mut signed = Vec::with_capacity(3 * sample.structure.len());
        for (f, label) in out.forces.iter().zip(&sample.forces) {
            for k in 0..3 {
                let r = label[k] - f[k];
                signed.push(r);
                sq += r * r;
            }
        }
        let eps = (sq / signed.len() as f64).sqrt();
        let u = match runtime.uncertainty(&sample.structure, &sample.id)? {
            Some(record) => {
                let u = record.u;
                records.push(record);
                u
            }
            None => f64::NAN,
        };
        pairs.push(EvalPair {
            id: sample.id.clone(),
            u,
            eps,
            eps_signed: signed,
        });
    }
    Ok((pairs, records))
}

/// Metric report for one generation. The GMM's NLL-valued U goes through
/// the affine calibration before the miscalibration area (raw NLL is not
/// a variance); rank metrics always see the raw U.
fn build_metrics(
    scheme: SchemeChoice,
    test: &[EvalPair],
    val: &[EvalPair],
) -> Result<Option<MetricReport>> {
    if scheme.uq_scheme().is_none() {
        return Ok(None);
    }
    let cal = metrics::calibrate(val)?;
    let miscal_pairs: Vec<EvalPair>;
    let (miscal_input, u_transform): (&[EvalPair], &str) = if scheme == SchemeChoice::Gmm {
        miscal_pairs = apply_affine(test, &cal);
        (&miscal_pairs, "affine_calibrated")
    } else {
        (test, "raw")
    };
    let report = MetricReport {
        spearman: metrics::spearman(test)?,
        roc_auc: metrics::roc_auc(test, 20.0)?,
        miscal_area: metrics::miscalibration_area(miscal_input)?,
        cnll: metrics::cnll(test, &cal)?,
        a_star: cal.a,
        b_star: cal.b,
        n: test.len(),
        config: MetricConfig {
            error_percentile: 20.0,
            eps_kind: format!("structure_force_rmse/u_{u_transform}"),
        },
    };
    Ok(Some(report))
}

fn apply_affine(pairs: &[EvalPair], cal: &Calibration) -> Vec<EvalPair> {
    pairs
        .iter()
        .map(|p| EvalPair {
            id: p.id.clone(),
            u: (cal.a * p.u + cal.b).max(metrics::CAL_FLOOR),
            eps: p.eps,
            eps_signed: p.eps_signed.clone(),
        })
        .collect()
}

fn md_stability_batch(
    runtime: &SchemeRuntime<'_>,
    dataset: &[LabeledSample],
    generation: usize,
) -> Result<StabilitySummary> {
    let cfg = runtime.cfg;
    let rules = cfg.md.stability_rules()?;
    let masses = cfg.oracle.mass_table();
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "md-pick", generation as u64));
    let picks: Vec<(usize, f64, u64)> = (0..cfg.md.trajectories)
        .map(|i| {
            let idx = rng.gen_range(0..dataset.len());
            let temp = cfg.md.temperatures[i % cfg.md.temperatures.len()];
            let seed = subseed(cfg.seed, "md-run", (generation * 100_000 + i) as u64);
            (idx, temp, seed)
        })
        .collect();

    let run_one = |(i, &(idx, temp, seed)): (usize, &(usize, f64, u64))| -> Result<(TrajStat, Trajectory)> {
        let md_cfg = MdConfig {
            ensemble: MdEnsemble::Nvt,
            temperature: temp,
            dt: cfg.md.dt,
            steps: cfg.md.steps,
            thermostat_mass: cfg.md.thermostat_mass,
            rules: rules.clone(),
            frame_stride: (cfg.md.steps / 20).max(1),
            seed,
            remove_com_momentum: true,
        };
        let traj = if cfg.scheme == SchemeChoice::Ensemble {
            let ff = EnsembleMeanForceField {
                bundle: &runtime.bundle,
            };
            md::run_md(&dataset[idx].structure, None, &ff, &masses, &md_cfg)?
        } else {
            let ff = MemberForceField {
                bundle: &runtime.bundle,
                member: 0,
            };
            md::run_md(&dataset[idx].structure, None, &ff, &masses, &md_cfg)?
        };
        Ok((
            TrajStat {
                index: i,
                temperature: temp,
                stable_steps: traj.stable_steps,
                failure: traj.failure.clone(),
            },
            traj,
        ))
    };

    let results: Vec<Result<(TrajStat, Trajectory)>> =
        picks.par_iter().enumerate().map(run_one).collect();
    let mut stats = Vec::with_capacity(results.len());
    let mut trajs = Vec::with_capacity(results.len());
    for r in results {
        let (stat, traj) = r?;
        stats.push(stat);
        trajs.push(traj);
    }
    let (fraction, mean_time) = md::stability_fraction(&trajs);
    Ok(StabilitySummary {
        fraction,
        mean_stable_time_fs: mean_time,
        trajectories: stats,
    })
}

/// Acquire new samples: adversarial ascent for UQ schemes, random
/// perturbations for the baseline. Returns labeled samples and the raw
/// ascent results for persistence.
fn acquire_samples(
    runtime: &SchemeRuntime<'_>,
    dataset: &[LabeledSample],
    generation: usize,
) -> Result<(Vec<LabeledSample>, Vec<AdversarialResult>)> {
    let cfg = runtime.cfg;
    let k = cfg.al.samples_per_generation;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "adv-pick", generation as u64));

    let label = |structures: Vec<Structure>, provenance: &str| -> Result<Vec<LabeledSample>> {
        structures
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let (e, f) = cfg.oracle.evaluate(&s)?;
                Ok(LabeledSample {
                    id: format!("adv-g{generation}-{i:04}"),
                    structure: s,
                    energy: e,
                    forces: f,
                    provenance: provenance.into(),
                })
            })
            .collect()
    };

    if cfg.scheme == SchemeChoice::Random {
        let mut structures = Vec::with_capacity(k);
        for _ in 0..k {
            let seed_sample = &dataset[rng.gen_range(0..dataset.len())];
            let mut s = seed_sample.structure.clone();
            for p in s.positions.iter_mut() {
                for x in p.iter_mut() {
                    *x += cfg.adversarial.random_noise * gauss(&mut rng);
                }
            }
            structures.push(s);
        }
        let samples = label(structures, &format!("random-gen{generation}"))?;
        return Ok((samples, Vec::new()));
    }

    let scheme = cfg.scheme.uq_scheme().expect("non-random scheme");
    let train_energies: Vec<f64> = dataset.iter().map(|s| s.energy).collect();
    let objective = SchemeObjective {
        bundle: &runtime.bundle,
        scheme,
        gmm: runtime.gmm.as_ref(),
        train_energies: &train_energies,
        temperature: cfg.adversarial.temperature,
    };

    let starts: Vec<(String, Structure, u64)> = (0..cfg.adversarial.candidates_per_generation)
        .map(|i| {
            let pick = rng.gen_range(0..dataset.len());
            (
                dataset[pick].id.clone(),
                dataset[pick].structure.clone(),
                subseed(cfg.seed, "adv-run", (generation * 100_000 + i) as u64),
            )
        })
        .collect();
    let n_atoms = starts.first().map_or(1, |(_, s, _)| s.len());
    let hint = objective.tape_hint(n_atoms);

    let results: Vec<Result<AdversarialResult>> = starts
        .par_iter()
        .map(|(seed_id, s, seed)| {
            let acfg = AdversarialConfig {
                temperature: cfg.adversarial.temperature,
                learning_rate: cfg.adversarial.learning_rate,
                steps: cfg.adversarial.steps,
                init_noise: cfg.adversarial.init_noise,
                seed: *seed,
                dedup_threshold: cfg.adversarial.dedup_threshold,
            };
            adversarial_ascend(s, seed_id, &objective, &acfg, hint)
        })
        .collect();
    // ascents that blow up numerically are dropped, not fatal
    let ok: Vec<AdversarialResult> = results.into_iter().filter_map(|r| r.ok()).collect();
    if ok.len() < k {
        return Err(Error::Sampling(format!(
            "only {} of {} adversarial ascents survived; need {k}",
            ok.len(),
            cfg.adversarial.candidates_per_generation
        )));
    }
    let selected = select_batch(&ok, k, cfg.adversarial.dedup_threshold)?;
    let structures: Vec<Structure> = selected.iter().map(|r| r.structure.clone()).collect();
    let samples = label(structures, &format!("adversarial-gen{generation}"))?;
    Ok((samples, ok))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn energy_histogram(energies: &[f64]) -> Vec<(f64, usize)> {
    if energies.is_empty() {
        return Vec::new();
    }
    let max = energies.iter().cloned().fold(0.0f64, f64::max);
    let bins = (max.floor() as usize) + 1;
    let mut hist = vec![0usize; bins];
    for &e in energies {
        let b = (e.max(0.0) as usize).min(bins - 1);
        hist[b] += 1;
    }
    hist.into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64, c))
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Run the loop against pre-generated shared data (used directly by
/// scheme comparisons so every scheme sees identical initial data).
pub fn run_al_loop_with_data(
    cfg: &ExperimentConfig,
    initial: &[LabeledSample],
    ladder: &[LabeledSample],
) -> Result<Vec<GenerationRecord>> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)
        .map_err(|e| Error::io(out.display().to_string(), e))?;
    let config_hash = cfg.hash();

    data::write_jsonl(&out.join("initial_dataset.jsonl"), initial)?;
    data::write_jsonl(&out.join("test_ladder.jsonl"), ladder)?;

    let mut dataset: Vec<LabeledSample> = initial.to_vec();
    let ladder_refs: Vec<&LabeledSample> = ladder.iter().collect();
    let mut records: Vec<GenerationRecord> = Vec::new();
    let mut timing: Vec<GenTiming> = Vec::new();
    let generations = cfg.al.generations;

    for g in 1..=generations {
        let gen_dir = out.join(format!("gen_{g:02}"));
        ensure_dir(&gen_dir)?;

        // dataset lineage checks: growth plus test isolation
        let manifest: Vec<ManifestEntry> = dataset
            .iter()
            .map(|s| ManifestEntry {
                id: s.id.clone(),
                provenance: s.provenance.clone(),
            })
            .collect();
        {
            let mut seen = std::collections::BTreeSet::new();
            for entry in &manifest {
                if entry.id.starts_with("test-") {
                    return Err(Error::Config(format!(
                        "test sample {} leaked into the training manifest",
                        entry.id
                    )));
                }
                if !seen.insert(&entry.id) {
                    return Err(Error::Config(format!("duplicate sample id {}", entry.id)));
                }
            }
            if let Some(prev) = records.last() {
                let prev_ids: std::collections::BTreeSet<&String> =
                    prev.manifest.iter().map(|e| &e.id).collect();
                let cur_ids: std::collections::BTreeSet<&String> =
                    manifest.iter().map(|e| &e.id).collect();
                if !prev_ids.is_subset(&cur_ids) {
                    return Err(Error::Config("dataset lineage shrank".into()));
                }
            }
        }

        // train
        let (train_refs, val_refs) = split_val(&dataset, subseed(cfg.seed, "val-split", g as u64));
        let train_data: Vec<LabeledSample> = train_refs.iter().map(|&s| s.clone()).collect();
        let mut bundle = ModelBundle::new(cfg.model_config()?, subseed(cfg.seed, "model", g as u64))?;
        let hp = Hyperparams {
            seed: subseed(cfg.seed, "train", g as u64),
            ..cfg.training.clone()
        };
        let spec = cfg.loss_spec();
        let t0 = Instant::now();
        let reports: Vec<TrainReport> = if cfg.scheme == SchemeChoice::Ensemble {
            train::train_ensemble(&mut bundle, &train_data, &spec, &hp)?
        } else {
            vec![train::train(&mut bundle, 0, &train_data, &spec, &hp)?]
        };
        let train_wall = t0.elapsed().as_secs_f64();
        write_json(&gen_dir.join("train_reports.json"), &reports)?;
        let model_file = gen_dir.join("model.json");
        std::fs::write(&model_file, bundle.to_json()?)
            .map_err(|e| Error::io(model_file.display().to_string(), e))?;

        // GMM over training latents (standard-head network)
        let (gmm_model, k_selection, gmm_file) = if cfg.scheme == SchemeChoice::Gmm {
            let mut latents: Vec<Vec<f64>> = Vec::new();
            for s in &train_data {
                let o = bundle.predict(0, &s.structure, &s.id)?;
                latents.extend(o.latent);
            }
            let (selection, model) = select_k(
                &latents,
                &cfg.gmm.k_candidates,
                subseed(cfg.seed, "gmm", g as u64),
                cfg.gmm.tol,
                cfg.gmm.max_iter,
            )?;
            let path = gen_dir.join("gmm.json");
            std::fs::write(&path, model.to_json()?)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            (Some(model), Some(selection), Some("gmm.json".to_string()))
        } else {
            (None, None, None)
        };

        let runtime = SchemeRuntime {
            cfg,
            bundle,
            gmm: gmm_model,
        };

        // evaluate
        let (test_pairs, test_records) = eval_pairs(&runtime, &ladder_refs)?;
        let (val_pairs, _) = eval_pairs(&runtime, &val_refs)?;
        metrics::write_pairs_csv(&gen_dir.join("eval_pairs_test.csv"), &test_pairs)?;
        metrics::write_pairs_csv(&gen_dir.join("eval_pairs_val.csv"), &val_pairs)?;
        if !test_records.is_empty() {
            crate::uncertainty::write_records_csv(
                &gen_dir.join("uncertainty.csv"),
                &test_records,
            )?;
        }
        let metric_report = build_metrics(cfg.scheme, &test_pairs, &val_pairs)?;

        let mut energy_abs = 0.0;
        let mut force_abs = 0.0;
        let mut force_n = 0usize;
        for (sample, pair) in ladder.iter().zip(&test_pairs) {
            let _ = pair;
            let out = runtime.predict(&sample.structure, &sample.id)?;
            energy_abs += (out.energy - sample.energy).abs();
            for (f, label) in out.forces.iter().zip(&sample.forces) {
                for k in 0..3 {
                    force_abs += (f[k] - label[k]).abs();
                    force_n += 1;
                }
            }
        }
        let energy_mae = energy_abs / ladder.len() as f64;
        let force_mae = force_abs / force_n.max(1) as f64;
        let member_force_maes: Vec<f64> = if cfg.scheme == SchemeChoice::Ensemble {
            (0..runtime.bundle.member_count())
                .map(|m| train::force_mae(&runtime.bundle, m, ladder))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        // MD stability
        let t1 = Instant::now();
        let stability = md_stability_batch(&runtime, &dataset, g)?;
        let md_wall = t1.elapsed().as_secs_f64();

        // acquire (not after the final generation)
        let (new_samples, ascent_results) = if g < generations {
            acquire_samples(&runtime, &dataset, g)?
        } else {
            (Vec::new(), Vec::new())
        };
        if !ascent_results.is_empty() {
            crate::adversarial::write_results_jsonl(
                &gen_dir.join("adversarial.jsonl"),
                &ascent_results,
            )?;
        }
        if !new_samples.is_empty() {
            data::write_jsonl(&gen_dir.join("new_samples.jsonl"), &new_samples)?;
        }
        let new_ids: Vec<String> = new_samples.iter().map(|s| s.id.clone()).collect();
        let new_energies: Vec<f64> = new_samples.iter().map(|s| s.energy).collect();

        let record = GenerationRecord {
            generation: g,
            config_hash: config_hash.clone(),
            scheme: cfg.scheme,
            manifest,
            model_file: "model.json".into(),
            gmm_file,
            k_selection,
            metrics: metric_report,
            energy_mae,
            force_mae,
            member_force_maes,
            stability,
            new_samples: new_ids,
            new_sample_energies: new_energies.clone(),
            energy_histogram: energy_histogram(&new_energies),
            train_wall_time_s: train_wall,
            md_wall_time_s: md_wall,
        };
        write_json(&gen_dir.join("record.json"), &record)?;
        timing.push(GenTiming {
            generation: g,
            train_wall_time_s: train_wall,
            md_wall_time_s: md_wall,
        });

        dataset.extend(new_samples);
        records.push(record);
    }

    data::write_jsonl(&out.join("dataset.jsonl"), &dataset)?;
    write_json(&out.join("records.json"), &records)?;
    write_json(&out.join("timing.json"), &timing)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path, scheme: SchemeChoice) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 77;
        cfg.out_dir = dir.to_path_buf();
        cfg.scheme = scheme;
        cfg.model.hidden = vec![8, 8];
        cfg.model.latent = 4;
        cfg.model.n_radial = 4;
        cfg.model.members = 2;
        cfg.training.epochs = 30;
        cfg.training.patience = 30;
        cfg.training.warmup_epochs = 5;
        cfg.al.generations = 2;
        cfg.al.initial_samples = 12;
        cfg.al.samples_per_generation = 3;
        cfg.al.test_bins = 10;
        cfg.al.test_per_bin = 2;
        cfg.adversarial.candidates_per_generation = 6;
        cfg.adversarial.steps = 5;
        cfg.md.trajectories = 2;
        cfg.md.steps = 50;
        cfg.md.energy_floor = Some(-100.0);
        cfg.gmm.k_candidates = vec![1, 2];
        cfg
    }

    #[test]
    fn single_generation_has_no_adversarial_samples() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), SchemeChoice::Gmm);
        cfg.al.generations = 1;
        let records = run_al_loop(&cfg).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].new_samples.is_empty());
        assert!(records[0]
            .manifest
            .iter()
            .all(|e| e.provenance == "initial"));
    }

    #[test]
    fn manifests_grow_and_ids_stay_unique() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), SchemeChoice::Ensemble);
        let records = run_al_loop(&cfg).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].manifest.len(), 12);
        assert_eq!(records[1].manifest.len(), 15);
        assert_eq!(records[0].new_samples.len(), 3);
        assert!(records[1].new_samples.is_empty());
        let ids: std::collections::BTreeSet<&String> =
            records[1].manifest.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), 15);
    }

    #[test]
    fn random_baseline_has_no_metrics_but_acquires() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), SchemeChoice::Random);
        let records = run_al_loop(&cfg).unwrap();
        assert!(records[0].metrics.is_none());
        assert_eq!(records[0].new_samples.len(), 3);
        assert!(records[1].manifest.len() == 15);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_config(dir_a.path(), SchemeChoice::Mve);
        let mut cfg_b = tiny_config(dir_b.path(), SchemeChoice::Mve);
        // out_dir differs but is not part of the comparison surface
        cfg_a.out_dir = dir_a.path().to_path_buf();
        cfg_b.out_dir = dir_b.path().to_path_buf();
        run_al_loop(&cfg_a).unwrap();
        run_al_loop(&cfg_b).unwrap();
        for file in ["gen_01/record.json", "gen_02/record.json", "dataset.jsonl"] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            // config hash covers out_dir, so mask it before comparing
            let sa = String::from_utf8(a).unwrap();
            let sb = String::from_utf8(b).unwrap();
            let strip = |s: &str| -> String {
                s.lines()
                    .filter(|l| !l.contains("config_hash"))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&sa), strip(&sb), "file {file} differs");
        }
    }
}
