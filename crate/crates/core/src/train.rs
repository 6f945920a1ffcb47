//! Losses and the optimization loop for all head types and ensembles.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sum, Tape, Var};
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::potential::{
    bind_params, bind_positions, forward, graph_size_hint, member_seed, GraphHead, HeadKind,
    ModelBundle, ModelConfig, ParamVector,
};

/// Variance floor inside the Gaussian NLL; the head itself stays a clean
/// softplus.
const VAR_FLOOR: f64 = 1e-10;
/// Smoothing of |residual| in the evidential regularizer.
const ABS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MseEf,
    MveNll,
    Evidential,
}

impl LossKind {
    pub fn for_head(head: HeadKind) -> LossKind {
        match head {
            HeadKind::Standard => LossKind::MseEf,
            HeadKind::Mve => LossKind::MveNll,
            HeadKind::Evidential => LossKind::Evidential,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// ρ_E, weight of the per-atom energy error term.
    pub energy_weight: f64,
    /// ρ_F, weight of the force term.
    pub force_weight: f64,
    /// λ, evidential evidence-regularizer weight.
    pub evidential_lambda: f64,
}

impl LossSpec {
    pub fn for_head(head: HeadKind) -> LossSpec {
        LossSpec {
            kind: LossKind::for_head(head),
            energy_weight: 0.1,
            force_weight: 1.0,
            evidential_lambda: 0.1,
        }
    }

    pub fn validate(&self, head: HeadKind) -> Result<()> {
        if self.energy_weight < 0.0 || self.force_weight < 0.0 || self.evidential_lambda < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        let expected = LossKind::for_head(head);
        if self.kind != expected {
            return Err(Error::Config(format!(
                "loss kind {:?} does not match model head {head}",
                self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Step decay: multiply the learning rate by `lr_decay` every
    /// `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Early stopping patience on the validation loss, in epochs.
    pub patience: usize,
    pub val_fraction: f64,
    /// Gradient-norm clamp; counts clamp events in the report.
    pub grad_clip_norm: Option<f64>,
    /// Epochs of plain energy+force MSE before switching to an NLL-type
    /// loss; joint mean-variance optimization diverges from a cold start.
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Train ensemble members on the rayon pool.
    pub parallel_members: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 400,
            learning_rate: 0.01,
            lr_decay: 0.7,
            decay_every: 150,
            patience: 50,
            val_fraction: 0.1,
            grad_clip_norm: Some(1e3),
            warmup_epochs: 100,
            seed: 0,
            parallel_members: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub member: usize,
    pub seed: u64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub wall_time_s: f64,
    pub clamp_events: usize,
    /// Set when training aborted on a non-finite loss; the best finite
    /// snapshot is retained.
    pub aborted: Option<String>,
}

/// Loss of one sample's graph outputs against its labels.
fn sample_loss<'t>(
    tape: &'t Tape,
    g: &crate::potential::GraphOutput<'t>,
    sample: &LabeledSample,
    spec: &LossSpec,
) -> Var<'t> {
    let n_atoms = sample.structure.len();
    let forces = g.forces.as_ref().expect("loss needs force expressions");
    let e_term = (g.energy - sample.energy).square() / n_atoms as f64;

    match spec.kind {
        LossKind::MseEf => {
            let mut f_terms = Vec::with_capacity(3 * n_atoms);
            for (fi, label) in forces.iter().zip(&sample.forces) {
                for k in 0..3 {
                    f_terms.push((fi[k] - label[k]).square());
                }
            }
            let f_mse = sum(tape, &f_terms) / (3 * n_atoms) as f64;
            e_term * spec.energy_weight + f_mse * spec.force_weight
        }
        LossKind::MveNll => {
            let variances = match &g.head {
                GraphHead::Mve { atom_variances } => atom_variances,
                _ => unreachable!("loss spec validated against head"),
            };
            let mut terms = Vec::with_capacity(3 * n_atoms);
            for ((fi, label), var) in forces.iter().zip(&sample.forces).zip(variances) {
                let v = *var + VAR_FLOOR;
                let ln_v = v.ln();
                for k in 0..3 {
                    let r2 = (fi[k] - label[k]).square();
                    terms.push((ln_v + r2 / v + (2.0 * std::f64::consts::PI).ln()) * 0.5);
                }
            }
            let nll = sum(tape, &terms) / (3 * n_atoms) as f64;
            e_term * spec.energy_weight + nll * spec.force_weight
        }
        LossKind::Evidential => {
            let (nu, alpha, beta) = match &g.head {
                GraphHead::Evidential { nu, alpha, beta } => (*nu, *alpha, *beta),
                _ => unreachable!("loss spec validated against head"),
            };
            let resid = g.energy - sample.energy;
            // Normal-Inverse-Gamma negative log-likelihood of the energy
            let omega = beta * (nu + 1.0) * 2.0;
            let nll = (std::f64::consts::PI / nu).ln() * 0.5 - alpha * omega.ln()
                + (nu * resid.square() + omega).ln() * (alpha + 0.5)
                + alpha.ln_gamma()
                - (alpha + 0.5).ln_gamma();
            let soft_abs = (resid.square() + ABS_EPS).sqrt();
            let reg = soft_abs * (nu * 2.0 + alpha);
            let mut f_terms = Vec::with_capacity(3 * n_atoms);
            for (fi, label) in forces.iter().zip(&sample.forces) {
                for k in 0..3 {
                    f_terms.push((fi[k] - label[k]).square());
                }
            }
            let f_mse = sum(tape, &f_terms) / (3 * n_atoms) as f64;
            nll * spec.energy_weight
                + reg * spec.evidential_lambda
                + f_mse * spec.force_weight
        }
    }
}

/// Mean loss over a batch as a tape expression rooted in `params`.
pub fn batch_loss<'t>(
    tape: &'t Tape,
    cfg: &ModelConfig,
    params: &[Var<'t>],
    samples: &[&LabeledSample],
    spec: &LossSpec,
) -> Result<Var<'t>> {
    let mut terms = Vec::with_capacity(samples.len());
    for sample in samples {
        let positions = bind_positions(tape, &sample.structure);
        let g = forward(tape, &sample.structure, &positions, params, cfg, true)?;
        terms.push(sample_loss(tape, &g, sample, spec));
    }
    Ok(sum(tape, &terms) / samples.len().max(1) as f64)
}

/// Batch loss value for fixed parameters (no parameter gradients).
pub fn loss_value(
    cfg: &ModelConfig,
    params: &ParamVector,
    samples: &[&LabeledSample],
    spec: &LossSpec,
) -> Result<f64> {
    let tape = Tape::with_capacity(
        samples.len() * graph_size_hint(cfg, samples.first().map_or(1, |s| s.structure.len())),
    );
    let bound = bind_params(&tape, params, false);
    let loss = batch_loss(&tape, cfg, &bound, samples, spec)?;
    let v = loss.value();
    if !v.is_finite() {
        return Err(Error::numeric("loss_value", "non-finite loss"));
    }
    Ok(v)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

fn split_train_val<'a>(
    data: &'a [LabeledSample],
    frac: f64,
    seed: u64,
) -> (Vec<&'a LabeledSample>, Vec<&'a LabeledSample>) {
    use rand::seq::SliceRandom;
    use rand_chacha::rand_core::SeedableRng;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * frac).round() as usize).min(data.len().saturating_sub(1));
    let (val_idx, train_idx) = idx.split_at(n_val);
    (
        train_idx.iter().map(|&i| &data[i]).collect(),
        val_idx.iter().map(|&i| &data[i]).collect(),
    )
}

/// Train one member in place. The best-validation snapshot is retained;
/// a non-finite loss aborts with the flag set instead of erroring.
pub fn train(
    bundle: &mut ModelBundle,
    member: usize,
    data: &[LabeledSample],
    spec: &LossSpec,
    hp: &Hyperparams,
) -> Result<TrainReport> {
    spec.validate(bundle.config.head)?;
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    if member >= bundle.members.len() {
        return Err(Error::Config(format!("member {member} out of range")));
    }
    let seed = member_seed(hp.seed, member);
    let start = Instant::now();
    let (train_set, val_set) = split_train_val(data, hp.val_fraction, seed);
    let cfg = bundle.config.clone();
    let mut params = bundle.members[member].clone();
    let n_params = params.len();

    let mut adam = Adam::new(n_params);
    let mut lr = hp.learning_rate;
    let mut best = params.values.clone();
    let mut best_metric = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut clamp_events = 0usize;
    let mut aborted = None;
    let mut train_losses = Vec::with_capacity(hp.epochs);
    let mut val_losses = Vec::with_capacity(hp.epochs);

    let hint = train_set.len()
        * graph_size_hint(&cfg, train_set.first().map_or(1, |s| s.structure.len()));
    let tape = Tape::with_capacity(hint.min(64_000_000));

    let warmup_spec = LossSpec {
        kind: LossKind::MseEf,
        ..spec.clone()
    };
    let warmup_epochs = if spec.kind == LossKind::MseEf {
        0
    } else {
        hp.warmup_epochs.min(hp.epochs / 2)
    };

    let mut epochs_run = 0usize;
    for epoch in 0..hp.epochs {
        epochs_run = epoch + 1;
        let in_warmup = epoch < warmup_epochs;
        let epoch_spec = if in_warmup { &warmup_spec } else { spec };
        tape.clear();
        let bound = bind_params(&tape, &params, true);
        let loss = batch_loss(&tape, &cfg, &bound, &train_set, epoch_spec)?;
        let loss_val = loss.value();
        if !loss_val.is_finite() {
            aborted = Some(format!("non-finite training loss at epoch {epoch}"));
            break;
        }
        train_losses.push(loss_val);

        let grads = match tape.grad(loss, &bound) {
            Ok(g) => g,
            Err(e) => {
                aborted = Some(format!("gradient failure at epoch {epoch}: {e}"));
                break;
            }
        };
        let mut grads = grads;
        if let Some(clip) = hp.grad_clip_norm {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let scale = clip / norm;
                for g in grads.iter_mut() {
                    *g *= scale;
                }
                clamp_events += 1;
            }
        }
        if hp.learning_rate > 0.0 {
            adam.step(&mut params.values, &grads, lr);
        }

        let metric = if val_set.is_empty() {
            loss_val
        } else {
            let v = loss_value(&cfg, &params, &val_set, epoch_spec)?;
            val_losses.push(v);
            v
        };
        // warmup epochs pre-train the mean; snapshots and patience only
        // count under the real loss
        if in_warmup {
            best.copy_from_slice(&params.values);
            best_epoch = epoch;
            if epoch + 1 == warmup_epochs {
                best_metric = f64::INFINITY;
                since_best = 0;
            }
        } else if metric < best_metric {
            best_metric = metric;
            best.copy_from_slice(&params.values);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > hp.patience {
                break;
            }
        }
        if hp.decay_every > 0 && (epoch + 1) % hp.decay_every == 0 {
            lr *= hp.lr_decay;
        }
    }

    params.values.copy_from_slice(&best);
    params.check_finite()?;
    bundle.members[member] = params;

    Ok(TrainReport {
        member,
        seed,
        train_losses,
        val_losses,
        best_epoch,
        epochs_run,
        wall_time_s: start.elapsed().as_secs_f64(),
        clamp_events,
        aborted,
    })
}

/// Train every member independently (distinct derived seeds). Members
/// whose training hard-fails keep their initial parameters and get a
/// synthesized aborted report; fewer than two surviving members is an
/// error.
pub fn train_ensemble(
    bundle: &mut ModelBundle,
    data: &[LabeledSample],
    spec: &LossSpec,
    hp: &Hyperparams,
) -> Result<Vec<TrainReport>> {
    let m = bundle.members.len();
    if m < 2 {
        return Err(Error::InsufficientMembers { got: m });
    }

    let cfg = bundle.config.clone();
    let run_one = |member: usize, params: ParamVector| -> (ParamVector, TrainReport) {
        let mut solo = ModelBundle {
            config: cfg.clone(),
            members: vec![ParamVector {
                values: Vec::new(),
                layout: Vec::new(),
            }],
        };
        solo.members[0] = params;
        match train_member_alias(&mut solo, member, data, spec, hp) {
            Ok(report) => (solo.members.pop().unwrap(), report),
            Err(e) => {
                let report = TrainReport {
                    member,
                    seed: member_seed(hp.seed, member),
                    train_losses: vec![],
                    val_losses: vec![],
                    best_epoch: 0,
                    epochs_run: 0,
                    wall_time_s: 0.0,
                    clamp_events: 0,
                    aborted: Some(format!("training failed: {e}")),
                };
                (solo.members.pop().unwrap(), report)
            }
        }
    };

    let results: Vec<(ParamVector, TrainReport)> = if hp.parallel_members {
        let inits: Vec<(usize, ParamVector)> = bundle
            .members
            .iter()
            .cloned()
            .enumerate()
            .collect();
        inits
            .into_par_iter()
            .map(|(i, p)| run_one(i, p))
            .collect()
    } else {
        bundle
            .members
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, p)| run_one(i, p))
            .collect()
    };

    let mut reports = Vec::with_capacity(m);
    for (i, (params, report)) in results.into_iter().enumerate() {
        bundle.members[i] = params;
        reports.push(report);
    }
    let survivors = reports.iter().filter(|r| r.aborted.is_none()).count();
    if survivors < 2 {
        return Err(Error::InsufficientMembers { got: survivors });
    }
    Ok(reports)
}

/// Trains member 0 of `solo` with the seed material of `member`.
fn train_member_alias(
    solo: &mut ModelBundle,
    member: usize,
    data: &[LabeledSample],
    spec: &LossSpec,
    hp: &Hyperparams,
) -> Result<TrainReport> {
    let derived = Hyperparams {
        seed: member_seed(hp.seed, member),
        ..hp.clone()
    };
    let mut report = train(solo, 0, data, spec, &derived)?;
    report.member = member;
    report.seed = derived.seed;
    Ok(report)
}

/// Force mean absolute error of one member over samples, kcal/mol/Å.
pub fn force_mae(bundle: &ModelBundle, member: usize, samples: &[LabeledSample]) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for s in samples {
        let out = bundle.predict(member, &s.structure, &s.id)?;
        for (f, label) in out.forces.iter().zip(&s.forces) {
            for k in 0..3 {
                acc += (f[k] - label[k]).abs();
                count += 1;
            }
        }
    }
    Ok(acc / count.max(1) as f64)
}

/// Energy mean absolute error per atom of one member, kcal/mol.
pub fn energy_mae(bundle: &ModelBundle, member: usize, samples: &[LabeledSample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        let out = bundle.predict(member, &s.structure, &s.id)?;
        acc += (out.energy - s.energy).abs();
    }
    Ok(acc / samples.len().max(1) as f64)
}
