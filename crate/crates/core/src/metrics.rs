//! Uncertainty evaluation metrics: rank correlation, ROC-AUC at an
//! error-percentile threshold, miscalibration area, and the calibrated
//! Gaussian negative log-likelihood.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Floor applied wherever a*U + b* must stay positive.
pub const CAL_FLOOR: f64 = 1e-12;

/// One evaluation point: predicted uncertainty against true error.
/// `eps_signed` optionally carries signed error realizations (e.g. per
/// force component); when empty, `eps` itself is the only realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub u: f64,
    pub eps: f64,
    #[serde(default)]
    pub eps_signed: Vec<f64>,
}

impl EvalPair {
    pub fn new(id: impl Into<String>, u: f64, eps: f64) -> Self {
        EvalPair {
            id: id.into(),
            u,
            eps,
            eps_signed: Vec::new(),
        }
    }

    fn realizations(&self) -> impl Iterator<Item = f64> + '_ {
        let single = if self.eps_signed.is_empty() {
            Some(self.eps)
        } else {
            None
        };
        self.eps_signed.iter().copied().chain(single)
    }
}

/// Fractional ranks with ties averaged.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of the rank variables.
pub fn spearman_slices(u: &[f64], eps: &[f64]) -> Result<f64> {
    if u.len() != eps.len() {
        return Err(Error::Config("slice length mismatch".into()));
    }
    if u.len() < 2 {
        return Err(Error::DegenerateMetric("need at least 2 pairs".into()));
    }
    let ru = ranks(u);
    let re = ranks(eps);
    let n = ru.len() as f64;
    let mu = ru.iter().sum::<f64>() / n;
    let me = re.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vu = 0.0;
    let mut ve = 0.0;
    for (a, b) in ru.iter().zip(&re) {
        cov += (a - mu) * (b - me);
        vu += (a - mu) * (a - mu);
        ve += (b - me) * (b - me);
    }
    if vu == 0.0 || ve == 0.0 {
        return Err(Error::DegenerateMetric(
            "zero rank variance: all uncertainties or all errors identical".into(),
        ));
    }
    Ok(cov / (vu.sqrt() * ve.sqrt()))
}

pub fn spearman(pairs: &[EvalPair]) -> Result<f64> {
    let u: Vec<f64> = pairs.iter().map(|p| p.u).collect();
    let e: Vec<f64> = pairs.iter().map(|p| p.eps).collect();
    spearman_slices(&u, &e)
}

/// Percentile by linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// ROC-AUC of the uncertainty as a classifier of high-error points.
/// Positives have ε above the `error_percentile` threshold; ties in U
/// count one half. Equals the probability that a random positive outranks
/// a random negative.
pub fn roc_auc(pairs: &[EvalPair], error_percentile: f64) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateMetric("need at least 2 pairs".into()));
    }
    let eps: Vec<f64> = pairs.iter().map(|p| p.eps).collect();
    let cut = percentile(&eps, error_percentile);
    let labels: Vec<bool> = pairs.iter().map(|p| p.eps > cut).collect();
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateMetric(format!(
            "single-class input after thresholding at percentile {error_percentile}"
        )));
    }
    let u: Vec<f64> = pairs.iter().map(|p| p.u).collect();
    let r = ranks(&u);
    let rank_sum: f64 = r
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l)
        .map(|(ri, _)| ri)
        .sum();
    let auc = (rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0) / (pos as f64 * neg as f64);
    Ok(auc)
}

/// Miscalibration area: treat each pair's U as a Gaussian error variance,
/// compare the observed coverage of the error realizations against the
/// expected two-sided coverage on a uniform grid of 100 quantiles, and
/// integrate the absolute gap by the trapezoid rule.
pub fn miscalibration_area(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.len() < 10 {
        return Err(Error::DegenerateMetric("need at least 10 pairs".into()));
    }
    if pairs.iter().any(|p| p.u <= 0.0) {
        return Err(Error::Config(
            "miscalibration area needs positive uncertainties; calibrate or offset them first"
                .into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let grid = 100usize;
    let mut area = 0.0;
    let mut prev_gap = None;
    let total: usize = pairs.map_realizations_count();
    for j in 0..grid {
        let p = j as f64 / (grid - 1) as f64;
        let z = if p >= 1.0 {
            f64::INFINITY
        } else {
            normal.inverse_cdf((1.0 + p) / 2.0)
        };
        let mut covered = 0usize;
        for pair in pairs {
            let bound = z * pair.u.sqrt();
            for e in pair.realizations() {
                if e.abs() <= bound {
                    covered += 1;
                }
            }
        }
        let observed = covered as f64 / total as f64;
        let gap = (observed - p).abs();
        if let Some(prev) = prev_gap {
            area += 0.5 * (gap + prev) / (grid - 1) as f64;
        }
        prev_gap = Some(gap);
    }
    Ok(area)
}

trait RealizationCount {
    fn map_realizations_count(&self) -> usize;
}

impl RealizationCount for &[EvalPair] {
    fn map_realizations_count(&self) -> usize {
        self.iter()
            .map(|p| if p.eps_signed.is_empty() { 1 } else { p.eps_signed.len() })
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
    /// Mean objective value attained on the validation pairs.
    pub objective: f64,
    /// The b floor was reached (degenerate all-zero errors drive b there).
    pub boundary_hit: bool,
    pub iterations: usize,
}

fn cal_objective(pairs: &[EvalPair], a: f64, b: f64) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut acc = 0.0;
    let mut count = 0usize;
    for p in pairs {
        let v = (a * p.u + b).max(CAL_FLOOR);
        for e in p.realizations() {
            acc += 0.5 * (ln2pi + v.ln() + e * e / v);
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// Fit σ̂² = a·U + b by minimizing the Gaussian NLL of the validation
/// errors: coordinate descent on (ln a, ln b) from a 3×3 multi-start
/// grid, then compared against the closed-form fallbacks (1, 0) and
/// (0, mean ε²) so the result is never worse than either.
pub fn calibrate(pairs: &[EvalPair]) -> Result<Calibration> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateMetric("need at least 2 validation pairs".into()));
    }
    let mean_u = pairs.iter().map(|p| p.u).sum::<f64>() / pairs.len() as f64;
    let mean_e2 = {
        let mut acc = 0.0;
        let mut n = 0usize;
        for p in pairs {
            for e in p.realizations() {
                acc += e * e;
                n += 1;
            }
        }
        acc / n.max(1) as f64
    };

    let a_scale = if mean_u > 0.0 { (mean_e2 / mean_u).max(CAL_FLOOR) } else { 1.0 };
    let b_scale = mean_e2.max(CAL_FLOOR);
    let (ln_lo, ln_hi) = (CAL_FLOOR.ln(), (b_scale.max(a_scale) * 1e6).ln());

    let mut best = (f64::INFINITY, 1.0, b_scale);
    let mut iterations = 0usize;
    for &fa in &[0.1, 1.0, 10.0] {
        for &fb in &[1e-3, 0.1, 1.0] {
            let mut la = (fa * a_scale).ln();
            let mut lb = (fb * b_scale).ln();
            let mut obj = cal_objective(pairs, la.exp(), lb.exp());
            for _ in 0..100 {
                iterations += 1;
                la = golden_min(
                    |x| cal_objective(pairs, x.exp(), lb.exp()),
                    ln_lo.max(la - 8.0),
                    ln_hi.min(la + 8.0),
                    1e-11,
                );
                lb = golden_min(
                    |x| cal_objective(pairs, la.exp(), x.exp()),
                    ln_lo.max(lb - 8.0),
                    ln_hi.min(lb + 8.0),
                    1e-11,
                );
                let next = cal_objective(pairs, la.exp(), lb.exp());
                if obj - next < 1e-10 {
                    obj = next.min(obj);
                    break;
                }
                obj = next;
            }
            if obj < best.0 {
                best = (obj, la.exp(), lb.exp());
            }
        }
    }

    // closed-form fallbacks
    let all_u_positive = pairs.iter().all(|p| p.u > 0.0);
    if all_u_positive {
        let obj = cal_objective(pairs, 1.0, 0.0);
        if obj < best.0 {
            best = (obj, 1.0, 0.0);
        }
    }
    let obj = cal_objective(pairs, 0.0, mean_e2.max(CAL_FLOOR));
    if obj < best.0 {
        best = (obj, 0.0, mean_e2.max(CAL_FLOOR));
    }

    let (objective, a, b) = best;
    let boundary_hit = b <= CAL_FLOOR * 1.01;
    Ok(Calibration {
        a,
        b,
        objective,
        boundary_hit,
        iterations,
    })
}

/// Calibrated Gaussian NLL on test pairs, mean per error realization;
/// σ̂² = a*·U + b* floored at `CAL_FLOOR`.
pub fn cnll(pairs: &[EvalPair], cal: &Calibration) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::DegenerateMetric("no test pairs".into()));
    }
    Ok(cal_objective(pairs, cal.a, cal.b))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub spearman: f64,
    pub roc_auc: f64,
    pub miscal_area: f64,
    pub cnll: f64,
    pub a_star: f64,
    pub b_star: f64,
    pub n: usize,
    pub config: MetricConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricConfig {
    pub error_percentile: f64,
    /// What ε was computed from (recorded for the report reader).
    pub eps_kind: String,
}

/// All four metrics over a test set, with calibration fitted on `val`.
/// Degenerate metrics surface as errors, not NaN.
pub fn full_report(
    test: &[EvalPair],
    val: &[EvalPair],
    error_percentile: f64,
    eps_kind: &str,
) -> Result<MetricReport> {
    let cal = calibrate(val)?;
    Ok(MetricReport {
        spearman: spearman(test)?,
        roc_auc: roc_auc(test, error_percentile)?,
        miscal_area: miscalibration_area(test)?,
        cnll: cnll(test, &cal)?,
        a_star: cal.a,
        b_star: cal.b,
        n: test.len(),
        config: MetricConfig {
            error_percentile,
            eps_kind: eps_kind.into(),
        },
    })
}

/// CSV rows: structure_id,u,eps[,eps_signed...].
pub fn write_pairs_csv(path: &std::path::Path, pairs: &[EvalPair]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "structure_id,u,eps").map_err(|e| Error::io(path.display().to_string(), e))?;
    for p in pairs {
        let mut line = format!("{},{:.17e},{:.17e}", p.id, p.u, p.eps);
        for e in &p.eps_signed {
            line.push_str(&format!(",{e:.17e}"));
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_pairs_csv(path: &std::path::Path) -> Result<Vec<EvalPair>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Serialization(e.to_string()))?;
        if record.len() < 3 {
            return Err(Error::Serialization(format!(
                "eval-pair row needs at least 3 fields, got {}",
                record.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse()
                .map_err(|e| Error::Serialization(format!("bad float in column {i}: {e}")))
        };
        let mut pair = EvalPair::new(record[0].to_string(), parse(1)?, parse(2)?);
        for i in 3..record.len() {
            pair.eps_signed.push(parse(i)?);
        }
        out.push(pair);
    }
    Ok(out)
}
