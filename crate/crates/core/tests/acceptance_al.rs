//! Long-running acceptance criteria: directional active-learning
//! reproduction on the inversion-molecule oracle, and the ensemble
//! averaging effect on the test ladder.

use std::path::Path;

use uqpot::experiment::{
    prepare_shared_data, run_al_loop_with_data, ExperimentConfig, SchemeChoice,
};
use uqpot::oracle;
use uqpot::train::{self, Hyperparams, LossSpec};
use uqpot::potential::{DescriptorConfig, HeadKind, ModelBundle, ModelConfig};

/// Desk-scale mirror of the ammonia generational experiment: 78 initial
/// low-energy samples, 20 adversarial samples per generation over two
/// acquisition rounds, MD stability judged on 20 NVT trajectories of
/// 10⁴ × 0.5 fs steps across four temperatures.
fn al_config(seed: u64, scheme: SchemeChoice, out_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.out_dir = out_dir.to_path_buf();
    cfg.scheme = scheme;

    cfg.model.cutoff = 4.0;
    cfg.model.n_radial = 8;
    cfg.model.hidden = vec![32, 32];
    cfg.model.latent = 16;
    cfg.model.members = 5;

    cfg.loss.energy_weight = 1.0;
    cfg.loss.force_weight = 1.0;

    cfg.training.epochs = 700;
    cfg.training.learning_rate = 0.01;
    cfg.training.lr_decay = 0.6;
    cfg.training.decay_every = 250;
    cfg.training.patience = 120;
    cfg.training.val_fraction = 0.1;
    cfg.training.warmup_epochs = 0;

    cfg.al.generations = 3;
    cfg.al.initial_samples = 78;
    cfg.al.samples_per_generation = 20;
    cfg.al.test_bins = 100;
    cfg.al.test_per_bin = 2;

    cfg.adversarial.temperature = 5000.0;
    cfg.adversarial.learning_rate = 0.02;
    cfg.adversarial.steps = 80;
    cfg.adversarial.init_noise = 0.02;
    cfg.adversarial.candidates_per_generation = 40;

    cfg.md.temperatures = vec![300.0, 500.0, 750.0, 1000.0];
    cfg.md.trajectories = 20;
    cfg.md.dt = 0.5;
    cfg.md.steps = 10_000;
    cfg.md.stability_preset = "ammonia".into();
    cfg.md.energy_floor = Some(-5.0);

    cfg
}

#[test]
fn c7_directional_active_learning() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let seeds = [101u64, 202, 303];
    let schemes = [SchemeChoice::Ensemble, SchemeChoice::Gmm];

    let mut gen1 = std::collections::BTreeMap::new();
    let mut gen3 = std::collections::BTreeMap::new();
    for &seed in &seeds {
        let template = al_config(seed, SchemeChoice::Ensemble, dir.path());
        let (initial, ladder) = prepare_shared_data(&template).unwrap();
        for &scheme in &schemes {
            let run_dir = dir.path().join(format!("s{seed}_{scheme}"));
            let cfg = al_config(seed, scheme, &run_dir);
            let records = run_al_loop_with_data(&cfg, &initial, &ladder).unwrap();
            assert_eq!(records.len(), 3);
            assert_eq!(records[2].manifest.len(), 78 + 40);
            let f1 = records[0].stability.fraction;
            let f3 = records[2].stability.fraction;
            println!(
                "  c7 seed {seed} {scheme}: gen1 {f1:.2} -> gen3 {f3:.2} \
                 (force MAE {:.2} -> {:.2})",
                records[0].force_mae, records[2].force_mae
            );
            *gen1.entry(scheme.to_string()).or_insert(0.0) += f1 / seeds.len() as f64;
            *gen3.entry(scheme.to_string()).or_insert(0.0) += f3 / seeds.len() as f64;
        }
    }

    let dt = start.elapsed().as_secs_f64();
    for scheme in ["ensemble", "gmm"] {
        let improvement = gen3[scheme] - gen1[scheme];
        assert!(
            improvement >= 0.10,
            "{scheme}: mean stable fraction gen1 {:.3} -> gen3 {:.3} \
             (improvement {improvement:.3} < 0.10)",
            gen1[scheme],
            gen3[scheme]
        );
    }
    assert!(dt < 7200.0, "runtime {dt:.0} s exceeds 2 h");
    println!(
        "ACCEPTANCE C7 directional-active-learning: PASS \
         (ensemble {:.2} -> {:.2}, gmm {:.2} -> {:.2}; {:.0} s)",
        gen1["ensemble"], gen3["ensemble"], gen1["gmm"], gen3["gmm"], dt
    );
}

#[test]
fn c8_ensemble_averaging_effect() {
    let oracle_spec = oracle::OracleSpec::inversion_default();
    let seeds = [11u64, 22, 33];
    let mut mean_ratio_num = 0.0;
    let mut mean_ratio_den = 0.0;
    for &seed in &seeds {
        let samples =
            oracle::generate_initial_dataset(&oracle_spec, 78, 300.0, seed, None).unwrap();
        let ladder = oracle::generate_test_ladder(&oracle_spec, 50, 2, seed ^ 0xFF, None).unwrap();
        let model_cfg = ModelConfig {
            descriptor: DescriptorConfig::new(4.0, 8, vec![1, 7]).unwrap(),
            hidden: vec![32, 32],
            latent: 16,
            head: HeadKind::Standard,
            members: 5,
        };
        let hp = Hyperparams {
            epochs: 500,
            learning_rate: 0.01,
            lr_decay: 0.6,
            decay_every: 200,
            patience: 100,
            val_fraction: 0.1,
            warmup_epochs: 0,
            seed,
            ..Hyperparams::default()
        };
        let mut bundle = ModelBundle::new(model_cfg, seed).unwrap();
        train::train_ensemble(&mut bundle, &samples, &LossSpec::for_head(HeadKind::Standard), &hp)
            .unwrap();

        // member MAEs and the mean-prediction MAE on the ladder
        let member_maes: Vec<f64> = (0..5)
            .map(|m| train::force_mae(&bundle, m, &ladder).unwrap())
            .collect();
        let min_member = member_maes.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut abs = 0.0;
        let mut n = 0usize;
        for s in &ladder {
            let mut mean_f = vec![[0.0f64; 3]; s.structure.len()];
            for m in 0..5 {
                let out = bundle.predict(m, &s.structure, &s.id).unwrap();
                for (acc, f) in mean_f.iter_mut().zip(&out.forces) {
                    for k in 0..3 {
                        acc[k] += f[k] / 5.0;
                    }
                }
            }
            for (f, label) in mean_f.iter().zip(&s.forces) {
                for k in 0..3 {
                    abs += (f[k] - label[k]).abs();
                    n += 1;
                }
            }
        }
        let ensemble_mae = abs / n as f64;
        println!(
            "  c8 seed {seed}: ensemble-mean MAE {ensemble_mae:.3}, min member {min_member:.3}"
        );
        mean_ratio_num += ensemble_mae / seeds.len() as f64;
        mean_ratio_den += min_member / seeds.len() as f64;
    }
    assert!(
        mean_ratio_num <= mean_ratio_den * 1.05,
        "seed-averaged ensemble-mean force MAE {mean_ratio_num:.4} exceeds \
         min-member MAE {mean_ratio_den:.4} + 5%"
    );
    println!(
        "ACCEPTANCE C8 ensemble-averaging-effect: PASS \
         (ensemble-mean {mean_ratio_num:.3} <= min-member {mean_ratio_den:.3} + 5%)"
    );
}
