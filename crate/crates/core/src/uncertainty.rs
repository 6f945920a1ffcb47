//! Scalar structure-level uncertainty for the four schemes: ensemble
//! variance, mean-variance estimation, deep evidential regression, and
//! latent-space GMM negative log-likelihood. Each scheme exists in a
//! value form (over `PotentialOutput`) and a tape form (over
//! `GraphOutput`) so adversarial ascent can differentiate it with
//! respect to atomic positions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, sum, Tape, Var};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::potential::{GraphHead, GraphOutput, HeadOutput, PotentialOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ensemble,
    Mve,
    Evidential,
    Gmm,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Ensemble => "ensemble",
            Scheme::Mve => "mve",
            Scheme::Evidential => "evidential",
            Scheme::Gmm => "gmm",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(Scheme::Ensemble),
            "mve" => Ok(Scheme::Mve),
            "evidential" => Ok(Scheme::Evidential),
            "gmm" => Ok(Scheme::Gmm),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// How per-atom quantities pool to one structure scalar. Mean is smooth
/// and is the default; max is piecewise and stalls gradient ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
}

impl Default for Pooling {
    fn default() -> Self {
        Pooling::Mean
    }
}

fn pool(values: &[f64], pooling: Pooling) -> f64 {
    match pooling {
        Pooling::Mean => values.iter().sum::<f64>() / values.len().max(1) as f64,
        Pooling::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub structure_id: String,
    pub scheme: Scheme,
    /// σ²_F for ensemble and MVE, Var[μ_F] for evidential, NLL for GMM
    /// (unbounded below).
    pub u: f64,
    /// σ²_E for ensemble, aleatoric E[σ²_F] for evidential.
    pub aux1: Option<f64>,
    pub aux2: Option<f64>,
}

/// Ensemble energy and force variances over member outputs:
/// σ²_E with Bessel correction, σ²_F as the member-mean of per-atom
/// squared force deviations (divided by 3n) with the same correction.
pub fn ensemble_uncertainty(outputs: &[PotentialOutput]) -> Result<(f64, f64)> {
    let m = outputs.len();
    if m < 2 {
        return Err(Error::InsufficientMembers { got: m });
    }
    let n = outputs[0].forces.len();
    if outputs.iter().any(|o| o.forces.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: outputs.iter().map(|o| o.forces.len()).max().unwrap(),
        });
    }

    let mean_e = outputs.iter().map(|o| o.energy).sum::<f64>() / m as f64;
    let sigma2_e = outputs
        .iter()
        .map(|o| (o.energy - mean_e).powi(2))
        .sum::<f64>()
        / (m - 1) as f64;

    let mut mean_f = vec![[0.0f64; 3]; n];
    for o in outputs {
        for (mf, f) in mean_f.iter_mut().zip(&o.forces) {
            for k in 0..3 {
                mf[k] += f[k] / m as f64;
            }
        }
    }
    let mut sigma2_f = 0.0;
    for o in outputs {
        let mut dev = 0.0;
        for (f, mf) in o.forces.iter().zip(&mean_f) {
            for k in 0..3 {
                dev += (f[k] - mf[k]).powi(2);
            }
        }
        sigma2_f += dev / (3 * n) as f64;
    }
    sigma2_f /= (m - 1) as f64;
    Ok((sigma2_e, sigma2_f))
}

/// MVE structure uncertainty: pooled per-atom force variance head.
pub fn mve_uncertainty(out: &PotentialOutput) -> Result<f64> {
    mve_uncertainty_pooled(out, Pooling::Mean)
}

pub fn mve_uncertainty_pooled(out: &PotentialOutput, pooling: Pooling) -> Result<f64> {
    match &out.head {
        HeadOutput::Mve { atom_variances } => Ok(pool(atom_variances, pooling)),
        other => Err(scheme_mismatch("mve", "mve", other)),
    }
}

/// Evidential uncertainties: aleatoric β/(α−1) and epistemic β/(ν(α−1)).
/// The scheme's U is the epistemic part.
pub fn evidential_uncertainty(out: &PotentialOutput) -> Result<(f64, f64)> {
    match &out.head {
        HeadOutput::Evidential { nu, alpha, beta } => {
            if *alpha <= 1.0 {
                return Err(Error::numeric(
                    "evidential_uncertainty",
                    format!("alpha = {alpha} <= 1 outside the valid domain"),
                ));
            }
            let aleatoric = beta / (alpha - 1.0);
            let epistemic = beta / (nu * (alpha - 1.0));
            Ok((aleatoric, epistemic))
        }
        other => Err(scheme_mismatch("evidential", "evidential", other)),
    }
}

/// GMM uncertainty: pooled per-atom latent NLL under the fitted mixture.
pub fn gmm_uncertainty(g: &GmmModel, out: &PotentialOutput) -> Result<f64> {
    gmm_uncertainty_pooled(g, out, Pooling::Mean)
}

pub fn gmm_uncertainty_pooled(g: &GmmModel, out: &PotentialOutput, pooling: Pooling) -> Result<f64> {
    let nlls: Vec<f64> = out
        .latent
        .iter()
        .map(|row| g.nll(row))
        .collect::<Result<_>>()?;
    Ok(pool(&nlls, pooling))
}

fn scheme_mismatch(scheme: &str, expected: &str, actual: &HeadOutput) -> Error {
    let actual = match actual {
        HeadOutput::Standard => "standard",
        HeadOutput::Mve { .. } => "mve",
        HeadOutput::Evidential { .. } => "evidential",
    };
    Error::SchemeMismatch {
        scheme: scheme.into(),
        expected: expected.into(),
        actual: actual.into(),
    }
}

// ── tape forms, for gradient ascent over positions ──

/// σ²_F as a tape expression over member graphs (all on one tape).
pub fn ensemble_sigma2_f_graph<'t>(
    tape: &'t Tape,
    outputs: &[GraphOutput<'t>],
) -> Result<Var<'t>> {
    let m = outputs.len();
    if m < 2 {
        return Err(Error::InsufficientMembers { got: m });
    }
    let forces: Vec<&Vec<[Var<'t>; 3]>> = outputs
        .iter()
        .map(|o| o.forces.as_ref().expect("ensemble graph needs forces"))
        .collect();
    let n = forces[0].len();
    let inv_m = 1.0 / m as f64;
    let mut member_devs = Vec::with_capacity(m);
    let mut mean_f: Vec<[Var<'t>; 3]> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = [tape.constant(0.0); 3];
        for (k, slot) in row.iter_mut().enumerate() {
            let comps: Vec<Var<'t>> = forces.iter().map(|f| f[i][k]).collect();
            *slot = sum(tape, &comps) * inv_m;
        }
        mean_f.push(row);
    }
    for f in &forces {
        let mut devs = Vec::with_capacity(3 * n);
        for i in 0..n {
            for k in 0..3 {
                devs.push((f[i][k] - mean_f[i][k]).square());
            }
        }
        member_devs.push(sum(tape, &devs) / (3 * n) as f64);
    }
    Ok(sum(tape, &member_devs) / (m - 1) as f64)
}

/// Mean energy over member graphs.
pub fn ensemble_mean_energy_graph<'t>(tape: &'t Tape, outputs: &[GraphOutput<'t>]) -> Var<'t> {
    let energies: Vec<Var<'t>> = outputs.iter().map(|o| o.energy).collect();
    sum(tape, &energies) / outputs.len().max(1) as f64
}

/// Pooled MVE variance as a tape expression.
pub fn mve_sigma2_graph<'t>(tape: &'t Tape, out: &GraphOutput<'t>) -> Result<Var<'t>> {
    match &out.head {
        GraphHead::Mve { atom_variances } => {
            Ok(sum(tape, atom_variances) / atom_variances.len().max(1) as f64)
        }
        _ => Err(Error::SchemeMismatch {
            scheme: "mve".into(),
            expected: "mve".into(),
            actual: "other".into(),
        }),
    }
}

/// Epistemic Var[μ_F] = β/(ν(α−1)) as a tape expression.
pub fn evidential_epistemic_graph<'t>(out: &GraphOutput<'t>) -> Result<Var<'t>> {
    match &out.head {
        GraphHead::Evidential { nu, alpha, beta } => Ok(*beta / (*nu * (*alpha - 1.0))),
        _ => Err(Error::SchemeMismatch {
            scheme: "evidential".into(),
            expected: "evidential".into(),
            actual: "other".into(),
        }),
    }
}

/// Mean per-atom latent NLL as a tape expression (log-sum-exp inside).
pub fn gmm_nll_graph<'t>(
    tape: &'t Tape,
    g: &GmmModel,
    latent: &[Vec<Var<'t>>],
) -> Result<Var<'t>> {
    let d = g.dim;
    let mut atom_nlls = Vec::with_capacity(latent.len());
    for row in latent {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        let mut terms = Vec::with_capacity(g.k);
        for k in 0..g.k {
            let mu = &g.means[k];
            let prec = &g.precisions()[k];
            // quadratic form (ξ−μ)ᵀ P (ξ−μ), exploiting symmetry of P
            let diffs: Vec<Var<'t>> = row
                .iter()
                .zip(mu)
                .map(|(x, &m)| *x - m)
                .collect();
            let mut quad = tape.constant(0.0);
            for i in 0..d {
                quad = quad + diffs[i].square() * prec[i * d + i];
                for j in (i + 1)..d {
                    quad = quad + (diffs[i] * diffs[j]) * (2.0 * prec[i * d + j]);
                }
            }
            terms.push(quad * (-0.5) + g.log_norms()[k]);
        }
        atom_nlls.push(-log_sum_exp(tape, &terms));
    }
    Ok(sum(tape, &atom_nlls) / atom_nlls.len().max(1) as f64)
}

/// CSV rows: structure_id,scheme,u,aux1,aux2 (empty cells for None).
pub fn write_records_csv(path: &std::path::Path, records: &[UncertaintyRecord]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "structure_id,scheme,u,aux1,aux2")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for r in records {
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.17e},{},{}",
            r.structure_id,
            r.scheme,
            r.u,
            fmt(&r.aux1),
            fmt(&r.aux2)
        )
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}
