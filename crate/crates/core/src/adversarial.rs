//! Gradient-ascent adversarial sampling: maximize the Boltzmann-weighted
//! uncertainty of a perturbed structure to propose new training data.
//!
//! The ascent runs on a log objective: ln p + ln U for the positive
//! uncertainty schemes, ln p + U for the GMM (its NLL can be negative).
//! Steps are normalized to a fixed length so all schemes move through
//! coordinate space at the same rate regardless of U's magnitude.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Structure;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::md::KB;
use crate::potential::{bind_params, bind_positions, forward, graph_size_hint, ModelBundle};
use crate::uncertainty::{
    ensemble_mean_energy_graph, ensemble_sigma2_f_graph, evidential_epistemic_graph,
    gmm_nll_graph, mve_sigma2_graph, Scheme,
};

/// Keeps ln U defined when a scheme's variance underflows to zero.
const U_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversarialConfig {
    /// Boltzmann temperature, K.
    pub temperature: f64,
    /// Step length per ascent iteration, Å.
    pub learning_rate: f64,
    pub steps: usize,
    /// Isotropic Gaussian scale of the initial perturbation δ, Å.
    pub init_noise: f64,
    pub seed: u64,
    /// Minimum RMSD between selected candidates, Å.
    pub dedup_threshold: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            temperature: 300.0,
            learning_rate: 0.01,
            steps: 60,
            init_noise: 0.01,
            seed: 0,
            dedup_threshold: 0.05,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config("adversarial temperature must be > 0".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("adversarial steps must be >= 1".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub seed_id: String,
    pub structure: Structure,
    /// Log-domain ascent objective per step, length steps + 1.
    pub objective_trace: Vec<f64>,
    pub final_p: f64,
    pub final_u: f64,
    pub final_energy: f64,
    /// Every step saw a (numerically) zero gradient.
    pub stalled: bool,
}

/// Boltzmann weight of a predicted energy against the training energies,
/// log-sum-exp stabilized: exp(−Ê/kT) / Σ_train exp(−E/kT).
pub fn boltzmann_prob(e_hat: f64, train_energies: &[f64], temperature: f64) -> Result<f64> {
    Ok(log_boltzmann_prob(e_hat, train_energies, temperature)?.exp())
}

fn log_boltzmann_prob(e_hat: f64, train_energies: &[f64], temperature: f64) -> Result<f64> {
    if train_energies.is_empty() {
        return Err(Error::Config("no training energies".into()));
    }
    if temperature <= 0.0 {
        return Err(Error::Config("temperature must be > 0".into()));
    }
    if !e_hat.is_finite() || train_energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::numeric("boltzmann_prob", "non-finite energy"));
    }
    let kt = KB * temperature;
    let xs: Vec<f64> = train_energies.iter().map(|e| -e / kt).collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    Ok(-e_hat / kt - lse)
}

/// Values reported alongside the log objective at one ascent point.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub p: f64,
    pub u: f64,
    pub energy: f64,
}

/// A differentiable log-domain ascent objective over positions.
pub trait AscentObjective: Sync {
    fn build<'t>(
        &self,
        tape: &'t Tape,
        s: &Structure,
        positions: &[[Var<'t>; 3]],
    ) -> Result<(Var<'t>, ObjectiveParts)>;
}

/// The production objective: model uncertainty per scheme, Boltzmann
/// weighted by the model's own predicted energy.
pub struct SchemeObjective<'a> {
    pub bundle: &'a ModelBundle,
    pub scheme: Scheme,
    /// Required for the GMM scheme.
    pub gmm: Option<&'a GmmModel>,
    pub train_energies: &'a [f64],
    pub temperature: f64,
}

impl SchemeObjective<'_> {
    pub fn tape_hint(&self, n_atoms: usize) -> usize {
        let members = match self.scheme {
            Scheme::Ensemble => self.bundle.member_count(),
            _ => 1,
        };
        members * graph_size_hint(&self.bundle.config, n_atoms) * 2
    }
}

impl AscentObjective for SchemeObjective<'_> {
    fn build<'t>(
        &self,
        tape: &'t Tape,
        s: &Structure,
        positions: &[[Var<'t>; 3]],
    ) -> Result<(Var<'t>, ObjectiveParts)> {
        let cfg = &self.bundle.config;
        let (energy, u_graph): (Var<'t>, Var<'t>) = match self.scheme {
            Scheme::Ensemble => {
                let graphs: Vec<_> = self
                    .bundle
                    .members
                    .iter()
                    .map(|member| {
                        let params = bind_params(tape, member, false);
                        forward(tape, s, positions, &params, cfg, true)
                    })
                    .collect::<Result<_>>()?;
                let e = ensemble_mean_energy_graph(tape, &graphs);
                let u = ensemble_sigma2_f_graph(tape, &graphs)?;
                (e, u)
            }
            Scheme::Mve => {
                let params = bind_params(tape, &self.bundle.members[0], false);
                let g = forward(tape, s, positions, &params, cfg, false)?;
                let u = mve_sigma2_graph(tape, &g)?;
                (g.energy, u)
            }
            Scheme::Evidential => {
                let params = bind_params(tape, &self.bundle.members[0], false);
                let g = forward(tape, s, positions, &params, cfg, false)?;
                let u = evidential_epistemic_graph(&g)?;
                (g.energy, u)
            }
            Scheme::Gmm => {
                let gmm = self.gmm.ok_or_else(|| {
                    Error::Config("gmm scheme needs a fitted mixture model".into())
                })?;
                let params = bind_params(tape, &self.bundle.members[0], false);
                let g = forward(tape, s, positions, &params, cfg, false)?;
                let u = gmm_nll_graph(tape, gmm, &g.latent)?;
                (g.energy, u)
            }
        };

        let kt = KB * self.temperature;
        let log_z = {
            let xs: Vec<f64> = self.train_energies.iter().map(|e| -e / kt).collect();
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        };
        let log_p = energy * (-1.0 / kt) - log_z;
        let objective = match self.scheme {
            Scheme::Gmm => log_p + u_graph,
            _ => log_p + (u_graph + U_FLOOR).ln(),
        };
        let parts = ObjectiveParts {
            p: log_p.value().exp(),
            u: u_graph.value(),
            energy: energy.value(),
        };
        Ok((objective, parts))
    }
}

/// Perturb a seed structure with isotropic noise and ascend the log
/// objective with unit-normalized gradient steps of fixed length.
pub fn adversarial_ascend(
    seed_structure: &Structure,
    seed_id: &str,
    objective: &dyn AscentObjective,
    cfg: &AdversarialConfig,
    tape_hint: usize,
) -> Result<AdversarialResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut s = seed_structure.clone();
    for p in s.positions.iter_mut() {
        for k in p.iter_mut() {
            *k += cfg.init_noise * gauss(&mut rng);
        }
    }

    let tape = Tape::with_capacity(tape_hint);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut zero_grad_steps = 0usize;
    let mut parts = ObjectiveParts {
        p: 0.0,
        u: 0.0,
        energy: 0.0,
    };

    for step in 0..=cfg.steps {
        tape.clear();
        let positions = bind_positions(&tape, &s);
        let (obj, current) = objective.build(&tape, &s, &positions)?;
        parts = current;
        let value = obj.value();
        if !value.is_finite() {
            return Err(Error::numeric(
                format!("adversarial_ascend({seed_id})"),
                format!("non-finite objective at step {step}"),
            ));
        }
        trace.push(value);
        if step == cfg.steps {
            break;
        }

        let flat: Vec<Var> = positions.iter().flat_map(|p| p.iter().copied()).collect();
        let grad = tape.grad(obj, &flat)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-14 || cfg.learning_rate == 0.0 {
            if norm < 1e-14 {
                zero_grad_steps += 1;
            }
            continue;
        }
        let scale = cfg.learning_rate / norm;
        for (i, p) in s.positions.iter_mut().enumerate() {
            for k in 0..3 {
                p[k] += scale * grad[3 * i + k];
            }
        }
        if s.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric(
                format!("adversarial_ascend({seed_id})"),
                "update produced non-finite coordinates",
            ));
        }
    }

    Ok(AdversarialResult {
        seed_id: seed_id.into(),
        structure: s,
        objective_trace: trace,
        final_p: parts.p,
        final_u: parts.u,
        final_energy: parts.energy,
        stalled: zero_grad_steps == cfg.steps,
    })
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Top-k results by final objective after greedy RMSD deduplication.
/// Returns fewer than k when deduplication leaves fewer survivors.
pub fn select_batch(
    results: &[AdversarialResult],
    k: usize,
    dedup_threshold: f64,
) -> Result<Vec<AdversarialResult>> {
    if k > results.len() {
        return Err(Error::Config(format!(
            "cannot select {k} from {} results",
            results.len()
        )));
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        let oa = results[a].objective_trace.last().unwrap();
        let ob = results[b].objective_trace.last().unwrap();
        ob.partial_cmp(oa).unwrap()
    });
    let mut selected: Vec<AdversarialResult> = Vec::with_capacity(k);
    for idx in order {
        if selected.len() >= k {
            break;
        }
        let candidate = &results[idx];
        let dup = selected.iter().any(|s| {
            s.structure.len() == candidate.structure.len()
                && s.structure.rmsd(&candidate.structure) < dedup_threshold
        });
        if !dup {
            selected.push(candidate.clone());
        }
    }
    Ok(selected)
}

/// JSON-lines persistence, one result per line.
pub fn write_results_jsonl(path: &std::path::Path, results: &[AdversarialResult]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in results {
        let line = serde_json::to_string(r).map_err(|e| Error::Serialization(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_energies_give_one_over_n() {
        let train = vec![2.5; 8];
        let p = boltzmann_prob(2.5, &train, 300.0).unwrap();
        assert!((p - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn half_probability_at_kt_ln2_above() {
        let t = 300.0;
        let e0 = 1.0;
        let e = e0 + KB * t * 2f64.ln();
        let p = boltzmann_prob(e, &[e0], t).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infinite_temperature_limit() {
        let train = vec![0.0, 5.0, 10.0, 50.0];
        let p = boltzmann_prob(123.0, &train, 1e14).unwrap();
        assert!((p - 0.25).abs() < 1e-9);
    }

    #[test]
    fn probabilities_sum_to_one_over_train() {
        let train = vec![0.3, 1.7, 4.2, 9.9, 0.0];
        let total: f64 = train
            .iter()
            .map(|&e| boltzmann_prob(e, &train, 500.0).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_point_shift_leaves_p() {
        let train = vec![0.0, 2.0, 5.0];
        let c = 17.3;
        let shifted: Vec<f64> = train.iter().map(|e| e + c).collect();
        for &e in &train {
            let a = boltzmann_prob(e, &train, 300.0).unwrap();
            let b = boltzmann_prob(e + c, &shifted, 300.0).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_energy_is_an_error() {
        assert!(boltzmann_prob(f64::NAN, &[0.0], 300.0).is_err());
    }

    struct Quadratic {
        target: Vec<[f64; 3]>,
    }

    impl AscentObjective for Quadratic {
        fn build<'t>(
            &self,
            tape: &'t Tape,
            _s: &Structure,
            positions: &[[Var<'t>; 3]],
        ) -> Result<(Var<'t>, ObjectiveParts)> {
            // uniform p, U(x) = −|x − target|²; ascend the objective itself
            let mut obj = tape.constant(0.0);
            for (p, t) in positions.iter().zip(&self.target) {
                for k in 0..3 {
                    obj = obj - (p[k] - t[k]).square();
                }
            }
            let parts = ObjectiveParts {
                p: 1.0,
                u: obj.value(),
                energy: 0.0,
            };
            Ok((obj, parts))
        }
    }

    fn two_atoms() -> Structure {
        Structure::new(vec![1, 1], vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_noisy_seed() {
        let s = two_atoms();
        let obj = Quadratic {
            target: vec![[1.0; 3], [2.0; 3]],
        };
        let cfg = AdversarialConfig {
            learning_rate: 0.0,
            steps: 10,
            init_noise: 0.05,
            ..AdversarialConfig::default()
        };
        let r = adversarial_ascend(&s, "s0", &obj, &cfg, 1 << 12).unwrap();
        assert_eq!(r.objective_trace.len(), 11);
        let first = r.objective_trace[0];
        assert!(r.objective_trace.iter().all(|&v| v == first));
        // moved only by the initial noise
        for (p, q) in r.structure.positions.iter().zip(&s.positions) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 0.3);
            }
        }
    }

    #[test]
    fn quadratic_oracle_converges_toward_target() {
        let s = two_atoms();
        let target = vec![[0.3, 0.1, -0.2], [1.2, 0.4, 0.3]];
        let obj = Quadratic {
            target: target.clone(),
        };
        let cfg = AdversarialConfig {
            learning_rate: 1e-3,
            steps: 400,
            init_noise: 0.0,
            ..AdversarialConfig::default()
        };
        let r = adversarial_ascend(&s, "s0", &obj, &cfg, 1 << 12).unwrap();
        assert!(r.objective_trace.last().unwrap() >= &r.objective_trace[0]);
        // non-decreasing trace at this step size
        for w in r.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        let d0: f64 = s
            .positions
            .iter()
            .zip(&target)
            .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).powi(2)))
            .sum();
        let d1: f64 = r
            .structure
            .positions
            .iter()
            .zip(&target)
            .flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).powi(2)))
            .sum();
        assert!(d1 < d0 * 0.2, "distance² {d0} -> {d1}");
    }

    #[test]
    fn exact_stationary_start_stalls() {
        let s = two_atoms();
        let obj = Quadratic {
            target: s.positions.clone(),
        };
        let cfg = AdversarialConfig {
            learning_rate: 0.01,
            steps: 5,
            init_noise: 0.0,
            ..AdversarialConfig::default()
        };
        let r = adversarial_ascend(&s, "s0", &obj, &cfg, 1 << 12).unwrap();
        assert!(r.stalled);
        assert_eq!(r.structure.positions, s.positions);
    }

    fn mk_result(id: &str, obj: f64, positions: Vec<[f64; 3]>) -> AdversarialResult {
        AdversarialResult {
            seed_id: id.into(),
            structure: Structure::new(vec![1; positions.len()], positions).unwrap(),
            objective_trace: vec![obj],
            final_p: 1.0,
            final_u: obj,
            final_energy: 0.0,
            stalled: false,
        }
    }

    #[test]
    fn select_all_sorted_when_threshold_zero() {
        let results = vec![
            mk_result("a", 1.0, vec![[0.0; 3]]),
            mk_result("b", 3.0, vec![[1.0; 3]]),
            mk_result("c", 2.0, vec![[2.0; 3]]),
        ];
        let sel = select_batch(&results, 3, 0.0).unwrap();
        let ids: Vec<&str> = sel.iter().map(|r| r.seed_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c", "a"]);
    }

    #[test]
    fn duplicates_collapse_to_one() {
        let results = vec![
            mk_result("a", 1.0, vec![[0.0; 3]]),
            mk_result("b", 2.0, vec![[0.0; 3]]),
            mk_result("c", 3.0, vec![[5.0; 3]]),
        ];
        let sel = select_batch(&results, 3, 0.1).unwrap();
        assert_eq!(sel.len(), 2);
        assert_eq!(sel[0].seed_id, "c");
        assert_eq!(sel[1].seed_id, "b");
    }

    #[test]
    fn greedy_matches_brute_force_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let results: Vec<AdversarialResult> = (0..30)
            .map(|i| {
                let positions: Vec<[f64; 3]> = (0..3)
                    .map(|_| {
                        [
                            rng.gen::<f64>() * 0.5,
                            rng.gen::<f64>() * 0.5,
                            rng.gen::<f64>() * 0.5,
                        ]
                    })
                    .collect();
                mk_result(&format!("r{i}"), rng.gen::<f64>(), positions)
            })
            .collect();
        let threshold = 0.1;
        let sel = select_batch(&results, 20, threshold).unwrap();

        // straight-line reference: sort, then greedy accept
        let mut order: Vec<usize> = (0..results.len()).collect();
        order.sort_by(|&a, &b| {
            results[b].objective_trace[0]
                .partial_cmp(&results[a].objective_trace[0])
                .unwrap()
        });
        let mut expect: Vec<&str> = Vec::new();
        let mut kept: Vec<usize> = Vec::new();
        for idx in order {
            if expect.len() >= 20 {
                break;
            }
            if kept
                .iter()
                .all(|&j| results[j].structure.rmsd(&results[idx].structure) >= threshold)
            {
                kept.push(idx);
                expect.push(&results[idx].seed_id);
            }
        }
        let got: Vec<&str> = sel.iter().map(|r| r.seed_id.as_str()).collect();
        assert_eq!(got, expect);
    }
}
