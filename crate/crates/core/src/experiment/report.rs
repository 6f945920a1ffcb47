//! Scheme comparison over a shared initial dataset, and report-file
//! emission (plot-ready CSVs plus a human-readable summary).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::experiment::{
    prepare_shared_data, run_al_loop_with_data, ExperimentConfig, GenerationRecord, SchemeChoice,
};
use crate::potential::graph_size_hint;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheme: SchemeChoice,
    pub generation: usize,
    pub energy_mae: Option<f64>,
    pub force_mae: Option<f64>,
    pub spearman: Option<f64>,
    pub roc_auc: Option<f64>,
    pub miscal_area: Option<f64>,
    pub cnll: Option<f64>,
    pub stable_fraction: Option<f64>,
    pub train_wall_time_s: Option<f64>,
    pub peak_mem_estimate_bytes: Option<u64>,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub initial_dataset_hash: String,
    pub rows: Vec<ComparisonRow>,
}

fn dataset_hash(samples: &[LabeledSample]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update(s.id.as_bytes());
        hasher.update(s.energy.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn estimate_peak_memory(cfg: &ExperimentConfig, n_train: usize, n_atoms: usize) -> u64 {
    let model_cfg = match cfg.model_config() {
        Ok(c) => c,
        Err(_) => return 0,
    };
    let nodes = (n_train * graph_size_hint(&model_cfg, n_atoms)).min(64_000_000) as u64;
    let members = if cfg.scheme == SchemeChoice::Ensemble && cfg.training.parallel_members {
        (rayon::current_num_threads() as u64).min(cfg.model.members as u64)
    } else {
        1
    };
    // 32 bytes per tape node plus parameter copies
    members * nodes * 32
}

fn rows_from_records(
    cfg: &ExperimentConfig,
    records: &[GenerationRecord],
    n_train0: usize,
    n_atoms: usize,
) -> Vec<ComparisonRow> {
    records
        .iter()
        .map(|r| ComparisonRow {
            scheme: r.scheme,
            generation: r.generation,
            energy_mae: Some(r.energy_mae),
            force_mae: Some(r.force_mae),
            spearman: r.metrics.as_ref().map(|m| m.spearman),
            roc_auc: r.metrics.as_ref().map(|m| m.roc_auc),
            miscal_area: r.metrics.as_ref().map(|m| m.miscal_area),
            cnll: r.metrics.as_ref().map(|m| m.cnll),
            stable_fraction: Some(r.stability.fraction),
            train_wall_time_s: Some(r.train_wall_time_s),
            peak_mem_estimate_bytes: Some(estimate_peak_memory(
                cfg,
                n_train0 + r.manifest.len(),
                n_atoms,
            )),
            failed: None,
        })
        .collect()
}

/// Run the loop once per scheme against identical initial data and test
/// ladder. A scheme failure marks its row instead of aborting the rest.
pub fn compare_schemes(
    template: &ExperimentConfig,
    schemes: &[SchemeChoice],
) -> Result<ComparisonTable> {
    if schemes.is_empty() {
        return Err(Error::Config("no schemes to compare".into()));
    }
    let (initial, ladder) = prepare_shared_data(template)?;
    let hash = dataset_hash(&initial);
    let n_atoms = initial.first().map_or(1, |s| s.structure.len());

    let mut rows = Vec::new();
    for &scheme in schemes {
        let mut cfg = template.clone();
        cfg.scheme = scheme;
        cfg.out_dir = template.out_dir.join(scheme.to_string());
        match run_al_loop_with_data(&cfg, &initial, &ladder) {
            Ok(records) => rows.extend(rows_from_records(&cfg, &records, 0, n_atoms)),
            Err(e) => rows.push(ComparisonRow {
                scheme,
                generation: 0,
                energy_mae: None,
                force_mae: None,
                spearman: None,
                roc_auc: None,
                miscal_area: None,
                cnll: None,
                stable_fraction: None,
                train_wall_time_s: None,
                peak_mem_estimate_bytes: None,
                failed: Some(e.to_string()),
            }),
        }
    }

    let table = ComparisonTable {
        initial_dataset_hash: hash,
        rows,
    };
    std::fs::create_dir_all(&template.out_dir)
        .map_err(|e| Error::io(template.out_dir.display().to_string(), e))?;
    let json_path = template.out_dir.join("comparison.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&table).map_err(|e| Error::Serialization(e.to_string()))?,
    )
    .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    write_comparison_csv(&template.out_dir.join("comparison.csv"), &table)?;
    let summary = comparison_summary(&table);
    std::fs::write(template.out_dir.join("comparison_summary.txt"), summary)
        .map_err(|e| Error::io(template.out_dir.display().to_string(), e))?;
    Ok(table)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_comparison_csv(path: &Path, table: &ComparisonTable) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "scheme,generation,energy_mae,force_mae,spearman,roc_auc,miscal_area,cnll,\
         stable_fraction,train_wall_time_s,peak_mem_estimate_bytes,failed"
    )
    .map_err(|e| Error::io(path.display().to_string(), e))?;
    for r in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.generation,
            fmt_opt(r.energy_mae),
            fmt_opt(r.force_mae),
            fmt_opt(r.spearman),
            fmt_opt(r.roc_auc),
            fmt_opt(r.miscal_area),
            fmt_opt(r.cnll),
            fmt_opt(r.stable_fraction),
            fmt_opt(r.train_wall_time_s),
            r.peak_mem_estimate_bytes
                .map(|b| b.to_string())
                .unwrap_or_default(),
            r.failed.clone().unwrap_or_default()
        )
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

struct MetricSpec {
    name: &'static str,
    higher_better: bool,
    get: fn(&ComparisonRow) -> Option<f64>,
}

const SUMMARY_METRICS: &[MetricSpec] = &[
    MetricSpec {
        name: "energy_mae",
        higher_better: false,
        get: |r| r.energy_mae,
    },
    MetricSpec {
        name: "force_mae",
        higher_better: false,
        get: |r| r.force_mae,
    },
    MetricSpec {
        name: "spearman",
        higher_better: true,
        get: |r| r.spearman,
    },
    MetricSpec {
        name: "roc_auc",
        higher_better: true,
        get: |r| r.roc_auc,
    },
    MetricSpec {
        name: "miscal_area",
        higher_better: false,
        get: |r| r.miscal_area,
    },
    MetricSpec {
        name: "cnll",
        higher_better: false,
        get: |r| r.cnll,
    },
    MetricSpec {
        name: "stable_fraction",
        higher_better: true,
        get: |r| r.stable_fraction,
    },
];

/// Best scheme per metric at the final generation, ties listed together.
pub fn comparison_summary(table: &ComparisonTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "initial dataset hash: {}\n\n",
        table.initial_dataset_hash
    ));
    let last_gen = table.rows.iter().map(|r| r.generation).max().unwrap_or(0);
    let finals: Vec<&ComparisonRow> = table
        .rows
        .iter()
        .filter(|r| r.generation == last_gen && r.failed.is_none())
        .collect();
    out.push_str(&format!("best per metric at generation {last_gen}:\n"));
    for spec in SUMMARY_METRICS {
        let mut scored: Vec<(&ComparisonRow, f64)> = finals
            .iter()
            .filter_map(|r| (spec.get)(r).map(|v| (*r, v)))
            .collect();
        if scored.is_empty() {
            out.push_str(&format!("  {:<16} n/a\n", spec.name));
            continue;
        }
        scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let best_val = if spec.higher_better {
            scored.last().unwrap().1
        } else {
            scored[0].1
        };
        let winners: Vec<String> = scored
            .iter()
            .filter(|(_, v)| (v - best_val).abs() <= 1e-12 * best_val.abs().max(1.0))
            .map(|(r, _)| r.scheme.to_string())
            .collect();
        out.push_str(&format!(
            "  {:<16} {} ({best_val:.6})\n",
            spec.name,
            winners.join(" = ")
        ));
    }
    for r in table.rows.iter().filter(|r| r.failed.is_some()) {
        out.push_str(&format!(
            "failed: {} -> {}\n",
            r.scheme,
            r.failed.as_deref().unwrap_or("")
        ));
    }
    out
}

/// Plot-ready CSVs and a text summary for one finished run directory.
/// Returns the files written.
pub fn emit_report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let records_path = run_dir.join("records.json");
    let text = std::fs::read_to_string(&records_path)
        .map_err(|e| Error::io(records_path.display().to_string(), e))?;
    let records: Vec<GenerationRecord> =
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
    if records.is_empty() {
        return Err(Error::Config("no generation records".into()));
    }
    let hash = &records[0].config_hash;
    if records.iter().any(|r| &r.config_hash != hash) {
        return Err(Error::Config(
            "records carry mismatched config hashes; refusing to mix artifacts".into(),
        ));
    }
    let report_dir = run_dir.join("report");
    std::fs::create_dir_all(&report_dir)
        .map_err(|e| Error::io(report_dir.display().to_string(), e))?;
    let mut written = Vec::new();

    // uncertainty-vs-error scatter rows, straight from the eval pairs
    let scatter = report_dir.join("scatter.csv");
    {
        let file =
            std::fs::File::create(&scatter).map_err(|e| Error::io(scatter.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "generation,structure_id,u,eps")
            .map_err(|e| Error::io(scatter.display().to_string(), e))?;
        for r in &records {
            let pairs_path = run_dir
                .join(format!("gen_{:02}", r.generation))
                .join("eval_pairs_test.csv");
            if !pairs_path.exists() {
                continue;
            }
            for p in crate::metrics::read_pairs_csv(&pairs_path)? {
                writeln!(w, "{},{},{:.12e},{:.12e}", r.generation, p.id, p.u, p.eps)
                    .map_err(|e| Error::io(scatter.display().to_string(), e))?;
            }
        }
        written.push(scatter);
    }

    let bars = report_dir.join("metric_bars.csv");
    {
        let file =
            std::fs::File::create(&bars).map_err(|e| Error::io(bars.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "generation,metric,value")
            .map_err(|e| Error::io(bars.display().to_string(), e))?;
        for r in &records {
            let mut push = |name: &str, v: f64| {
                writeln!(w, "{},{name},{v:.12e}", r.generation)
                    .map_err(|e| Error::io(bars.display().to_string(), e))
            };
            push("energy_mae", r.energy_mae)?;
            push("force_mae", r.force_mae)?;
            if let Some(m) = &r.metrics {
                push("spearman", m.spearman)?;
                push("roc_auc", m.roc_auc)?;
                push("miscal_area", m.miscal_area)?;
                push("cnll", m.cnll)?;
            }
            push("stable_fraction", r.stability.fraction)?;
        }
        written.push(bars);
    }

    let hist = report_dir.join("energy_hist.csv");
    {
        let file =
            std::fs::File::create(&hist).map_err(|e| Error::io(hist.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "generation,bin_low,count")
            .map_err(|e| Error::io(hist.display().to_string(), e))?;
        for r in &records {
            for (low, count) in &r.energy_histogram {
                writeln!(w, "{},{low},{count}", r.generation)
                    .map_err(|e| Error::io(hist.display().to_string(), e))?;
            }
        }
        written.push(hist);
    }

    let series = report_dir.join("stability_series.csv");
    {
        let file = std::fs::File::create(&series)
            .map_err(|e| Error::io(series.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "generation,stable_fraction,mean_stable_time_fs")
            .map_err(|e| Error::io(series.display().to_string(), e))?;
        for r in &records {
            writeln!(
                w,
                "{},{:.6},{:.3}",
                r.generation, r.stability.fraction, r.stability.mean_stable_time_fs
            )
            .map_err(|e| Error::io(series.display().to_string(), e))?;
        }
        written.push(series);
    }

    let summary = report_dir.join("summary.txt");
    {
        let mut out = String::new();
        out.push_str(&format!(
            "scheme: {}\nconfig hash: {}\n\n",
            records[0].scheme, hash
        ));
        for r in &records {
            out.push_str(&format!(
                "generation {}: {} training samples, energy MAE {:.4} kcal/mol, \
                 force MAE {:.4} kcal/mol/A, stable fraction {:.2}\n",
                r.generation,
                r.manifest.len(),
                r.energy_mae,
                r.force_mae,
                r.stability.fraction
            ));
            if let Some(m) = &r.metrics {
                out.push_str(&format!(
                    "  spearman {:.4}, roc_auc {:.4}, miscal_area {:.4}, cnll {:.4}\n",
                    m.spearman, m.roc_auc, m.miscal_area, m.cnll
                ));
            }
            if !r.new_samples.is_empty() {
                let max_e = r
                    .new_sample_energies
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                out.push_str(&format!(
                    "  acquired {} samples, max energy {max_e:.2} kcal/mol\n",
                    r.new_samples.len()
                ));
            }
        }
        std::fs::write(&summary, out).map_err(|e| Error::io(summary.display().to_string(), e))?;
        written.push(summary);
    }

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scheme: SchemeChoice, generation: usize, stable: f64, mae: f64) -> ComparisonRow {
        ComparisonRow {
            scheme,
            generation,
            energy_mae: Some(mae),
            force_mae: Some(mae * 2.0),
            spearman: Some(0.5),
            roc_auc: Some(0.7),
            miscal_area: Some(0.2),
            cnll: Some(1.0),
            stable_fraction: Some(stable),
            train_wall_time_s: Some(1.0),
            peak_mem_estimate_bytes: Some(1024),
            failed: None,
        }
    }

    #[test]
    fn summary_best_scheme_with_ties() {
        let table = ComparisonTable {
            initial_dataset_hash: "abc".into(),
            rows: vec![
                row(SchemeChoice::Ensemble, 2, 0.8, 0.5),
                row(SchemeChoice::Gmm, 2, 0.8, 0.3),
                row(SchemeChoice::Mve, 2, 0.4, 0.7),
            ],
        };
        let summary = comparison_summary(&table);
        // stable fraction ties between ensemble and gmm
        let line = summary
            .lines()
            .find(|l| l.contains("stable_fraction"))
            .unwrap();
        assert!(line.contains("ensemble = gmm"), "line: {line}");
        let line = summary.lines().find(|l| l.contains("energy_mae")).unwrap();
        assert!(line.contains("gmm"), "line: {line}");
        assert!(!line.contains("="), "no tie expected: {line}");
    }

    #[test]
    fn failed_rows_are_reported() {
        let mut r = row(SchemeChoice::Evidential, 0, 0.0, 0.0);
        r.failed = Some("boom".into());
        let table = ComparisonTable {
            initial_dataset_hash: "x".into(),
            rows: vec![row(SchemeChoice::Ensemble, 1, 0.5, 0.1), r],
        };
        let summary = comparison_summary(&table);
        assert!(summary.contains("failed: evidential -> boom"));
    }
}
