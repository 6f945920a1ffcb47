//! Command-line driver: dataset generation, training, uncertainty
//! scoring, metrics, adversarial sampling, MD stability, the full
//! active-learning loop, scheme comparison, and report emission.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric failure, 4 io error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use uqpot::adversarial::{adversarial_ascend, select_batch, AdversarialConfig, SchemeObjective};
use uqpot::data::{self, LabeledSample};
use uqpot::error::{Error, Result};
use uqpot::experiment::{
    compare_schemes, emit_report, prepare_shared_data, run_al_loop, subseed, ExperimentConfig,
    SchemeChoice,
};
use uqpot::gmm::GmmModel;
use uqpot::metrics;
use uqpot::potential::ModelBundle;
use uqpot::train::{train, train_ensemble, Hyperparams};

#[derive(Parser)]
#[command(
    name = "uqpot",
    version,
    about = "Uncertainty quantification lab for toy neural-network interatomic potentials"
)]
struct Cli {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the initial dataset and test ladder from the oracle.
    GenData,
    /// Train the configured scheme's model on a labeled dataset.
    Train {
        /// Dataset (JSON lines); defaults to <out>/initial_dataset.jsonl.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score per-structure uncertainties of a dataset under a model.
    Uncertainty {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Fitted mixture model (required for the gmm scheme).
        #[arg(long)]
        gmm: Option<PathBuf>,
    },
    /// Compute the metric report from an eval-pair CSV.
    Metrics {
        /// Test pairs: structure_id,u,eps[,eps_signed...].
        #[arg(long)]
        pairs: PathBuf,
        /// Validation pairs for the affine calibration; defaults to the
        /// test pairs (self-calibration).
        #[arg(long)]
        val: Option<PathBuf>,
        /// Error percentile for the ROC threshold.
        #[arg(long, default_value_t = 20.0)]
        percentile: f64,
    },
    /// Adversarially sample new structures from dataset seeds.
    Adversarial {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gmm: Option<PathBuf>,
        /// How many samples to select.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run an MD stability batch with a trained model.
    Md {
        #[arg(long)]
        model: PathBuf,
        /// Dataset the initial configurations are drawn from.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the generational active-learning loop.
    AlLoop,
    /// Run the loop once per scheme over shared initial data.
    Compare {
        /// Comma-separated schemes (default: the four UQ schemes).
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
    },
    /// Emit plot CSVs and a summary from a finished run directory.
    Report {
        /// Run directory; defaults to the configured output directory.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    ModelBundle::from_json(&text)
}

fn load_gmm(path: &Path) -> Result<GmmModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    GmmModel::from_json(&text)
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;

    match cli.command {
        Command::GenData => {
            ensure_out(&cfg)?;
            let (initial, ladder) = prepare_shared_data(&cfg)?;
            data::write_jsonl(&cfg.out_dir.join("initial_dataset.jsonl"), &initial)?;
            data::write_jsonl(&cfg.out_dir.join("test_ladder.jsonl"), &ladder)?;
            println!(
                "wrote {} initial samples and {} ladder samples to {}",
                initial.len(),
                ladder.len(),
                cfg.out_dir.display()
            );
        }
        Command::Train { data } => {
            ensure_out(&cfg)?;
            let data_path = data.unwrap_or_else(|| cfg.out_dir.join("initial_dataset.jsonl"));
            let samples = data::read_jsonl(&data_path)?;
            let mut bundle = ModelBundle::new(cfg.model_config()?, subseed(cfg.seed, "model", 1))?;
            let hp = Hyperparams {
                seed: subseed(cfg.seed, "train", 1),
                ..cfg.training.clone()
            };
            let spec = cfg.loss_spec();
            let reports = if cfg.scheme == SchemeChoice::Ensemble {
                train_ensemble(&mut bundle, &samples, &spec, &hp)?
            } else {
                vec![train(&mut bundle, 0, &samples, &spec, &hp)?]
            };
            let model_path = cfg.out_dir.join("model.json");
            std::fs::write(&model_path, bundle.to_json()?)
                .map_err(|e| Error::io(model_path.display().to_string(), e))?;
            let reports_path = cfg.out_dir.join("train_reports.json");
            std::fs::write(
                &reports_path,
                serde_json::to_string_pretty(&reports)
                    .map_err(|e| Error::Serialization(e.to_string()))?,
            )
            .map_err(|e| Error::io(reports_path.display().to_string(), e))?;
            if cfg.scheme == SchemeChoice::Gmm {
                let mut latents = Vec::new();
                for s in &samples {
                    latents.extend(bundle.predict(0, &s.structure, &s.id)?.latent);
                }
                let (selection, model) = uqpot::gmm::select_k(
                    &latents,
                    &cfg.gmm.k_candidates,
                    subseed(cfg.seed, "gmm", 1),
                    cfg.gmm.tol,
                    cfg.gmm.max_iter,
                )?;
                let gmm_path = cfg.out_dir.join("gmm.json");
                std::fs::write(&gmm_path, model.to_json()?)
                    .map_err(|e| Error::io(gmm_path.display().to_string(), e))?;
                println!("gmm fitted with K = {}", selection.chosen);
            }
            for r in &reports {
                println!(
                    "member {}: {} epochs, best epoch {}, final train loss {:.6e}{}",
                    r.member,
                    r.epochs_run,
                    r.best_epoch,
                    r.train_losses.last().copied().unwrap_or(f64::NAN),
                    r.aborted
                        .as_deref()
                        .map(|a| format!(" (aborted: {a})"))
                        .unwrap_or_default()
                );
            }
            println!("model written to {}", model_path.display());
        }
        Command::Uncertainty { model, data, gmm } => {
            ensure_out(&cfg)?;
            let bundle = load_model(&model)?;
            let samples = data::read_jsonl(&data)?;
            let gmm_model = gmm.as_deref().map(load_gmm).transpose()?;
            let scheme = cfg
                .scheme
                .uq_scheme()
                .ok_or_else(|| Error::Config("random scheme has no uncertainty".into()))?;
            let mut records = Vec::with_capacity(samples.len());
            for s in &samples {
                let record = score_one(&bundle, gmm_model.as_ref(), scheme, s)?;
                records.push(record);
            }
            let path = cfg.out_dir.join("uncertainty.csv");
            uqpot::uncertainty::write_records_csv(&path, &records)?;
            println!("wrote {} records to {}", records.len(), path.display());
        }
        Command::Metrics {
            pairs,
            val,
            percentile,
        } => {
            ensure_out(&cfg)?;
            let test_pairs = metrics::read_pairs_csv(&pairs)?;
            let val_pairs = match val {
                Some(p) => metrics::read_pairs_csv(&p)?,
                None => test_pairs.clone(),
            };
            let report =
                metrics::full_report(&test_pairs, &val_pairs, percentile, "csv_input")?;
            let path = cfg.out_dir.join("metrics.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Serialization(e.to_string()))?,
            )
            .map_err(|e| Error::io(path.display().to_string(), e))?;
            println!(
                "spearman {:.4}  roc_auc {:.4}  miscal_area {:.4}  cnll {:.4}  -> {}",
                report.spearman,
                report.roc_auc,
                report.miscal_area,
                report.cnll,
                path.display()
            );
        }
        Command::Adversarial {
            model,
            data,
            gmm,
            count,
        } => {
            ensure_out(&cfg)?;
            let bundle = load_model(&model)?;
            let samples = data::read_jsonl(&data)?;
            let gmm_model = gmm.as_deref().map(load_gmm).transpose()?;
            let scheme = cfg
                .scheme
                .uq_scheme()
                .ok_or_else(|| Error::Config("random scheme does not ascend".into()))?;
            let train_energies: Vec<f64> = samples.iter().map(|s| s.energy).collect();
            let objective = SchemeObjective {
                bundle: &bundle,
                scheme,
                gmm: gmm_model.as_ref(),
                train_energies: &train_energies,
                temperature: cfg.adversarial.temperature,
            };
            let k = count.unwrap_or(cfg.al.samples_per_generation);
            let n_candidates = cfg.adversarial.candidates_per_generation.max(k);
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "adv-pick", 1));
            let hint = objective.tape_hint(samples[0].structure.len());
            let mut results = Vec::new();
            for i in 0..n_candidates {
                let pick = rng.gen_range(0..samples.len());
                let acfg = AdversarialConfig {
                    temperature: cfg.adversarial.temperature,
                    learning_rate: cfg.adversarial.learning_rate,
                    steps: cfg.adversarial.steps,
                    init_noise: cfg.adversarial.init_noise,
                    seed: subseed(cfg.seed, "adv-run", i as u64),
                    dedup_threshold: cfg.adversarial.dedup_threshold,
                };
                match adversarial_ascend(
                    &samples[pick].structure,
                    &samples[pick].id,
                    &objective,
                    &acfg,
                    hint,
                ) {
                    Ok(r) => results.push(r),
                    Err(e) => eprintln!("ascent {i} failed: {e}"),
                }
            }
            if results.len() < k {
                return Err(Error::Sampling(format!(
                    "only {} ascents survived, need {k}",
                    results.len()
                )));
            }
            let selected = select_batch(&results, k, cfg.adversarial.dedup_threshold)?;
            uqpot::adversarial::write_results_jsonl(
                &cfg.out_dir.join("adversarial.jsonl"),
                &results,
            )?;
            let labeled: Vec<LabeledSample> = selected
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let (e, f) = cfg.oracle.evaluate(&r.structure)?;
                    Ok(LabeledSample {
                        id: format!("adv-{i:04}"),
                        structure: r.structure.clone(),
                        energy: e,
                        forces: f,
                        provenance: "adversarial-cli".into(),
                    })
                })
                .collect::<Result<_>>()?;
            data::write_jsonl(&cfg.out_dir.join("new_samples.jsonl"), &labeled)?;
            println!(
                "selected {} of {} ascents; labeled samples in {}",
                selected.len(),
                results.len(),
                cfg.out_dir.join("new_samples.jsonl").display()
            );
        }
        Command::Md { model, data } => {
            ensure_out(&cfg)?;
            let bundle = load_model(&model)?;
            let samples = data::read_jsonl(&data)?;
            let summary = md_batch(&cfg, &bundle, &samples)?;
            let path = cfg.out_dir.join("md_stability.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&summary)
                    .map_err(|e| Error::Serialization(e.to_string()))?,
            )
            .map_err(|e| Error::io(path.display().to_string(), e))?;
            println!(
                "stable fraction {:.3}, mean stable time {:.1} fs -> {}",
                summary.fraction,
                summary.mean_stable_time_fs,
                path.display()
            );
        }
        Command::AlLoop => {
            let records = run_al_loop(&cfg)?;
            for r in &records {
                println!(
                    "generation {}: {} samples, force MAE {:.4}, stable fraction {:.2}",
                    r.generation,
                    r.manifest.len(),
                    r.force_mae,
                    r.stability.fraction
                );
            }
            println!("artifacts in {}", cfg.out_dir.display());
        }
        Command::Compare { schemes } => {
            let parsed: Vec<SchemeChoice> = if schemes.is_empty() {
                SchemeChoice::all_uq().to_vec()
            } else {
                schemes
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<Vec<_>>>()?
            };
            let table = compare_schemes(&cfg, &parsed)?;
            println!("{}", uqpot::experiment::comparison_summary(&table));
            println!("table in {}", cfg.out_dir.join("comparison.csv").display());
        }
        Command::Report { run } => {
            let run_dir = run.unwrap_or_else(|| cfg.out_dir.clone());
            let files = emit_report(&run_dir)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn score_one(
    bundle: &ModelBundle,
    gmm: Option<&GmmModel>,
    scheme: uqpot::uncertainty::Scheme,
    sample: &LabeledSample,
) -> Result<uqpot::uncertainty::UncertaintyRecord> {
    use uqpot::uncertainty::*;
    let record = match scheme {
        Scheme::Ensemble => {
            let outs: Vec<_> = (0..bundle.member_count())
                .map(|m| bundle.predict(m, &sample.structure, &sample.id))
                .collect::<Result<_>>()?;
            let (sigma2_e, sigma2_f) = ensemble_uncertainty(&outs)?;
            UncertaintyRecord {
                structure_id: sample.id.clone(),
                scheme,
                u: sigma2_f,
                aux1: Some(sigma2_e),
                aux2: None,
            }
        }
        Scheme::Mve => {
            let out = bundle.predict(0, &sample.structure, &sample.id)?;
            UncertaintyRecord {
                structure_id: sample.id.clone(),
                scheme,
                u: mve_uncertainty(&out)?,
                aux1: None,
                aux2: None,
            }
        }
        Scheme::Evidential => {
            let out = bundle.predict(0, &sample.structure, &sample.id)?;
            let (aleatoric, epistemic) = evidential_uncertainty(&out)?;
            UncertaintyRecord {
                structure_id: sample.id.clone(),
                scheme,
                u: epistemic,
                aux1: Some(aleatoric),
                aux2: None,
            }
        }
        Scheme::Gmm => {
            let gmm =
                gmm.ok_or_else(|| Error::Config("gmm scheme needs --gmm <model.json>".into()))?;
            let out = bundle.predict(0, &sample.structure, &sample.id)?;
            UncertaintyRecord {
                structure_id: sample.id.clone(),
                scheme,
                u: gmm_uncertainty(gmm, &out)?,
                aux1: None,
                aux2: None,
            }
        }
    };
    Ok(record)
}

fn md_batch(
    cfg: &ExperimentConfig,
    bundle: &ModelBundle,
    samples: &[LabeledSample],
) -> Result<uqpot::experiment::StabilitySummary> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rayon::prelude::*;
    use uqpot::experiment::TrajStat;
    use uqpot::md::{self, MdConfig, MdEnsemble};
    use uqpot::potential::{EnsembleMeanForceField, MemberForceField};

    let rules = cfg.md.stability_rules()?;
    let masses = cfg.oracle.mass_table();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "md-pick", 1));
    let picks: Vec<(usize, f64, u64)> = (0..cfg.md.trajectories)
        .map(|i| {
            (
                rng.gen_range(0..samples.len()),
                cfg.md.temperatures[i % cfg.md.temperatures.len()],
                subseed(cfg.seed, "md-run", i as u64),
            )
        })
        .collect();
    let results: Vec<Result<(TrajStat, uqpot::md::Trajectory)>> = picks
        .par_iter()
        .enumerate()
        .map(|(i, &(idx, temp, seed))| {
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
                md::run_md(
                    &samples[idx].structure,
                    None,
                    &EnsembleMeanForceField { bundle },
                    &masses,
                    &md_cfg,
                )?
            } else {
                md::run_md(
                    &samples[idx].structure,
                    None,
                    &MemberForceField { bundle, member: 0 },
                    &masses,
                    &md_cfg,
                )?
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
        })
        .collect();
    let mut stats = Vec::new();
    let mut trajs = Vec::new();
    for r in results {
        let (stat, traj) = r?;
        stats.push(stat);
        trajs.push(traj);
    }
    let (fraction, mean_time) = uqpot::md::stability_fraction(&trajs);
    Ok(uqpot::experiment::StabilitySummary {
        fraction,
        mean_stable_time_fs: mean_time,
        trajectories: stats,
    })
}
