//! Molecular dynamics: velocity-Verlet NVE, Nosé-Hoover NVT, and the
//! stability bookkeeping used to score potentials.
//!
//! Units: positions Å, time fs, energies kcal/mol, masses amu. One
//! trajectory is strictly sequential; batches of trajectories can run in
//! parallel because models are only read.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Structure;
use crate::error::{Error, Result};

/// Boltzmann constant, kcal/mol/K.
pub const KB: f64 = 0.001987204259;
/// Å/fs² produced by 1 kcal/mol/Å acting on 1 amu.
pub const ACC: f64 = 4.184e-4;

/// Anything that maps a structure to energy and forces.
pub trait ForceProvider: Sync {
    fn evaluate(&self, s: &Structure) -> Result<(f64, Vec<[f64; 3]>)>;
}

/// Atomic masses in amu keyed by atomic number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassTable(BTreeMap<u32, f64>);

impl MassTable {
    /// First few rows of the periodic table plus argon and silicon;
    /// oracles register their own species on top.
    pub fn builtin() -> Self {
        let mut m = BTreeMap::new();
        for (z, mass) in [
            (1, 1.008),
            (2, 4.0026),
            (6, 12.011),
            (7, 14.007),
            (8, 15.999),
            (14, 28.085),
            (18, 39.948),
        ] {
            m.insert(z, mass);
        }
        MassTable(m)
    }

    pub fn with(mut self, z: u32, mass: f64) -> Self {
        self.0.insert(z, mass);
        self
    }

    pub fn get(&self, z: u32) -> Result<f64> {
        self.0.get(&z).copied().ok_or_else(|| Error::SpeciesMismatch {
            z,
            registry: self.0.keys().copied().collect(),
        })
    }

    pub fn masses_for(&self, s: &Structure) -> Result<Vec<f64>> {
        s.atomic_numbers.iter().map(|&z| self.get(z)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdEnsemble {
    Nve,
    Nvt,
}

/// Per-step sanity rules; a violated rule truncates the trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityRules {
    pub min_distance: Option<f64>,
    pub max_distance: Option<f64>,
    pub min_energy: Option<f64>,
    pub max_kinetic: Option<f64>,
    #[serde(default)]
    pub fail_on_zero_kinetic: bool,
}

impl StabilityRules {
    pub fn none() -> Self {
        StabilityRules {
            min_distance: None,
            max_distance: None,
            min_energy: None,
            max_kinetic: None,
            fail_on_zero_kinetic: false,
        }
    }

    /// Small-molecule rule set: collision below 0.75 Å, dissociation
    /// beyond 2.25 Å, predicted energy below the ground-state reference.
    pub fn ammonia() -> Self {
        StabilityRules {
            min_distance: Some(0.75),
            max_distance: Some(2.25),
            min_energy: Some(0.0),
            max_kinetic: None,
            fail_on_zero_kinetic: false,
        }
    }

    /// Bulk rule set: collision below 1.0 Å, kinetic energy vanishing,
    /// going non-finite, or exceeding 10,000 kcal/mol.
    pub fn silica() -> Self {
        StabilityRules {
            min_distance: Some(1.0),
            max_distance: None,
            min_energy: None,
            max_kinetic: Some(10_000.0),
            fail_on_zero_kinetic: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ammonia" => Ok(Self::ammonia()),
            "silica" => Ok(Self::silica()),
            "none" => Ok(Self::none()),
            other => Err(Error::Config(format!("unknown stability preset '{other}'"))),
        }
    }

    fn check(&self, s: &Structure, energy: f64, kinetic: f64) -> Option<&'static str> {
        if !energy.is_finite() || !kinetic.is_finite() {
            return Some("model_nan");
        }
        if self.min_distance.is_some() || self.max_distance.is_some() {
            let n = s.len();
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = s.distance(i, j);
                    if let Some(lo) = self.min_distance {
                        if d < lo {
                            return Some("min_distance");
                        }
                    }
                    if let Some(hi) = self.max_distance {
                        if d > hi {
                            return Some("max_distance");
                        }
                    }
                }
            }
        }
        if let Some(floor) = self.min_energy {
            if energy < floor {
                return Some("min_energy");
            }
        }
        if let Some(cap) = self.max_kinetic {
            if kinetic > cap {
                return Some("max_kinetic");
            }
        }
        if self.fail_on_zero_kinetic && kinetic <= 0.0 {
            return Some("zero_kinetic");
        }
        None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdConfig {
    pub ensemble: MdEnsemble,
    /// Target temperature, K. Ignored for NVE runs with given velocities.
    pub temperature: f64,
    /// Timestep, fs.
    pub dt: f64,
    pub steps: usize,
    /// Thermostat mass Q (kcal/mol · fs²); default N_dof·kB·T·(20 dt)².
    pub thermostat_mass: Option<f64>,
    pub rules: StabilityRules,
    /// Record every `frame_stride`-th state (step 0 always recorded).
    pub frame_stride: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub remove_com_momentum: bool,
}

fn default_true() -> bool {
    true
}

impl MdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.ensemble == MdEnsemble::Nvt {
            if self.temperature <= 0.0 {
                return Err(Error::Config("NVT requires temperature > 0".into()));
            }
            if let Some(q) = self.thermostat_mass {
                if q <= 0.0 {
                    return Err(Error::Config("thermostat mass must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub step: usize,
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
    pub energy: f64,
    pub kinetic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    /// Index of the first violating state, or `steps` if none violated.
    pub stable_steps: usize,
    pub steps: usize,
    pub dt: f64,
    /// None iff the trajectory ran to completion.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn is_stable(&self) -> bool {
        self.failure.is_none()
    }

    pub fn stable_time(&self) -> f64 {
        self.stable_steps as f64 * self.dt
    }
}

/// Maxwell-Boltzmann velocities at temperature T (Å/fs).
pub fn maxwell_boltzmann(
    masses: &[f64],
    temperature: f64,
    seed: u64,
    remove_com: bool,
) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<[f64; 3]> = masses
        .iter()
        .map(|&m| {
            let std = (KB * temperature * ACC / m).sqrt();
            [
                std * normal_sample(&mut rng),
                std * normal_sample(&mut rng),
                std * normal_sample(&mut rng),
            ]
        })
        .collect();
    if remove_com {
        let total_mass: f64 = masses.iter().sum();
        let mut p = [0.0; 3];
        for (vi, &m) in v.iter().zip(masses) {
            for k in 0..3 {
                p[k] += m * vi[k];
            }
        }
        for vi in v.iter_mut() {
            for k in 0..3 {
                vi[k] -= p[k] / total_mass;
            }
        }
    }
    v
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn kinetic_energy(velocities: &[[f64; 3]], masses: &[f64]) -> f64 {
    let mut ke2 = 0.0;
    for (v, &m) in velocities.iter().zip(masses) {
        ke2 += m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    0.5 * ke2 / ACC
}

/// Instantaneous kinetic temperature, K.
pub fn kinetic_temperature(velocities: &[[f64; 3]], masses: &[f64], ndof: usize) -> f64 {
    2.0 * kinetic_energy(velocities, masses) / (ndof as f64 * KB)
}

struct NoseHoover {
    xi: f64,
    q: f64,
    ndof_kt: f64,
}

impl NoseHoover {
    /// Quarter-scale-quarter update over half a timestep.
    fn half_step(&mut self, velocities: &mut [[f64; 3]], masses: &[f64], dt: f64) {
        let mut ke2 = {
            let mut acc = 0.0;
            for (v, &m) in velocities.iter().zip(masses) {
                acc += m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            }
            acc / ACC
        };
        let g = (ke2 - self.ndof_kt) / self.q;
        self.xi += g * dt / 4.0;
        let scale = (-self.xi * dt / 2.0).exp();
        for v in velocities.iter_mut() {
            for k in 0..3 {
                v[k] *= scale;
            }
        }
        ke2 *= scale * scale;
        let g = (ke2 - self.ndof_kt) / self.q;
        self.xi += g * dt / 4.0;
    }
}

/// Integrate a trajectory. Velocities are Maxwell-Boltzmann drawn at
/// `cfg.temperature` when not supplied. Stability rules are checked on the
/// initial state and after every step; the first violation truncates.
pub fn run_md(
    init: &Structure,
    velocities: Option<Vec<[f64; 3]>>,
    model: &dyn ForceProvider,
    masses: &MassTable,
    cfg: &MdConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let m = masses.masses_for(init)?;
    let n = init.len();
    let ndof = if cfg.remove_com_momentum && n > 1 {
        3 * n - 3
    } else {
        3 * n
    };

    let mut s = init.clone();
    let mut v = match velocities {
        Some(v) => {
            if v.len() != n {
                return Err(Error::Config("velocity count != atom count".into()));
            }
            v
        }
        None => maxwell_boltzmann(&m, cfg.temperature, cfg.seed, cfg.remove_com_momentum),
    };

    let mut thermostat = match cfg.ensemble {
        MdEnsemble::Nvt => Some(NoseHoover {
            xi: 0.0,
            q: cfg
                .thermostat_mass
                .unwrap_or_else(|| ndof as f64 * KB * cfg.temperature * (20.0 * cfg.dt).powi(2)),
            ndof_kt: ndof as f64 * KB * cfg.temperature,
        }),
        MdEnsemble::Nve => None,
    };

    let mut frames = Vec::new();
    let stride = cfg.frame_stride.max(1);

    let (mut energy, mut forces) = match model.evaluate(&s) {
        Ok(ef) => ef,
        Err(_) => {
            return Ok(Trajectory {
                frames,
                stable_steps: 0,
                steps: cfg.steps,
                dt: cfg.dt,
                failure: Some("model_nan".into()),
            })
        }
    };
    let mut kinetic = kinetic_energy(&v, &m);

    let record = |frames: &mut Vec<Frame>, step, s: &Structure, v: &[[f64; 3]], e, ke| {
        frames.push(Frame {
            step,
            positions: s.positions.clone(),
            velocities: v.to_vec(),
            energy: e,
            kinetic: ke,
        });
    };

    if let Some(reason) = cfg.rules.check(&s, energy, kinetic) {
        return Ok(Trajectory {
            frames,
            stable_steps: 0,
            steps: cfg.steps,
            dt: cfg.dt,
            failure: Some(reason.into()),
        });
    }
    record(&mut frames, 0, &s, &v, energy, kinetic);

    for step in 1..=cfg.steps {
        if let Some(th) = thermostat.as_mut() {
            th.half_step(&mut v, &m, cfg.dt);
        }
        // velocity Verlet
        for i in 0..n {
            let f = forces[i];
            for k in 0..3 {
                v[i][k] += 0.5 * cfg.dt * ACC * f[k] / m[i];
                s.positions[i][k] += cfg.dt * v[i][k];
            }
        }
        match model.evaluate(&s) {
            Ok((e, f)) => {
                energy = e;
                forces = f;
            }
            Err(_) => {
                return Ok(Trajectory {
                    frames,
                    stable_steps: step,
                    steps: cfg.steps,
                    dt: cfg.dt,
                    failure: Some("model_nan".into()),
                });
            }
        }
        for i in 0..n {
            for k in 0..3 {
                v[i][k] += 0.5 * cfg.dt * ACC * forces[i][k] / m[i];
            }
        }
        if let Some(th) = thermostat.as_mut() {
            th.half_step(&mut v, &m, cfg.dt);
        }
        kinetic = kinetic_energy(&v, &m);

        if let Some(reason) = cfg.rules.check(&s, energy, kinetic) {
            return Ok(Trajectory {
                frames,
                stable_steps: step,
                steps: cfg.steps,
                dt: cfg.dt,
                failure: Some(reason.into()),
            });
        }
        if step % stride == 0 {
            record(&mut frames, step, &s, &v, energy, kinetic);
        }
    }

    Ok(Trajectory {
        frames,
        stable_steps: cfg.steps,
        steps: cfg.steps,
        dt: cfg.dt,
        failure: None,
    })
}

/// Fraction of trajectories that completed, and the mean stable time (fs).
pub fn stability_fraction(trajs: &[Trajectory]) -> (f64, f64) {
    assert!(!trajs.is_empty(), "stability_fraction needs trajectories");
    let stable = trajs.iter().filter(|t| t.is_stable()).count();
    let mean_time = trajs.iter().map(Trajectory::stable_time).sum::<f64>() / trajs.len() as f64;
    (stable as f64 / trajs.len() as f64, mean_time)
}

/// Extended-XYZ dump; the comment line carries step, energy, kinetic.
pub fn write_xyz(path: &std::path::Path, traj: &Trajectory, atomic_numbers: &[u32]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for frame in &traj.frames {
        writeln!(w, "{}", atomic_numbers.len())
            .and_then(|_| {
                writeln!(
                    w,
                    "step={} energy={:.10} kinetic={:.10}",
                    frame.step, frame.energy, frame.kinetic
                )
            })
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (z, p) in atomic_numbers.iter().zip(&frame.positions) {
            writeln!(w, "{} {:.10} {:.10} {:.10}", z, p[0], p[1], p[2])
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Springs {
        k: f64,
        centers: Vec<[f64; 3]>,
    }

    impl ForceProvider for Springs {
        fn evaluate(&self, s: &Structure) -> Result<(f64, Vec<[f64; 3]>)> {
            let mut e = 0.0;
            let mut f = vec![[0.0; 3]; s.len()];
            for (i, p) in s.positions.iter().enumerate() {
                for k in 0..3 {
                    let d = p[k] - self.centers[i][k];
                    e += 0.5 * self.k * d * d;
                    f[i][k] = -self.k * d;
                }
            }
            Ok((e, f))
        }
    }

    struct ZeroForces;
    impl ForceProvider for ZeroForces {
        fn evaluate(&self, s: &Structure) -> Result<(f64, Vec<[f64; 3]>)> {
            Ok((1.0, vec![[0.0; 3]; s.len()]))
        }
    }

    fn cluster(n: usize, spacing: f64) -> Structure {
        let positions = (0..n).map(|i| [i as f64 * spacing, 0.0, 0.0]).collect();
        Structure::new(vec![18; n], positions).unwrap()
    }

    fn nve_cfg(steps: usize, dt: f64) -> MdConfig {
        MdConfig {
            ensemble: MdEnsemble::Nve,
            temperature: 300.0,
            dt,
            steps,
            thermostat_mass: None,
            rules: StabilityRules::none(),
            frame_stride: 100,
            seed: 7,
            remove_com_momentum: true,
        }
    }

    #[test]
    fn zero_forces_zero_velocities_stay_put() {
        let s = cluster(3, 3.0);
        let v = vec![[0.0; 3]; 3];
        let traj =
            run_md(&s, Some(v), &ZeroForces, &MassTable::builtin(), &nve_cfg(50, 0.5)).unwrap();
        assert!(traj.is_stable());
        let last = traj.frames.last().unwrap();
        assert_eq!(last.positions, s.positions);
    }

    #[test]
    fn nve_harmonic_energy_drift_small() {
        let n = 8;
        let s = cluster(n, 2.0);
        let model = Springs {
            k: 10.0,
            centers: s.positions.clone(),
        };
        let masses = MassTable::builtin();
        let m = masses.masses_for(&s).unwrap();
        let v = maxwell_boltzmann(&m, 300.0, 3, true);
        let mut cfg = nve_cfg(10_000, 0.3);
        cfg.frame_stride = 1;
        let traj = run_md(&s, Some(v), &model, &masses, &cfg).unwrap();
        let e0 = traj.frames[0].energy + traj.frames[0].kinetic;
        let max_dev = traj
            .frames
            .iter()
            .map(|f| ((f.energy + f.kinetic) - e0).abs() / e0.abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-4, "relative energy deviation {max_dev}");
    }

    #[test]
    fn nve_momentum_conserved() {
        let n = 5;
        let s = cluster(n, 2.0);
        let model = Springs {
            k: 25.0,
            centers: s.positions.clone(),
        };
        let masses = MassTable::builtin();
        let m = masses.masses_for(&s).unwrap();
        let v = maxwell_boltzmann(&m, 500.0, 11, true);
        let mut cfg = nve_cfg(2000, 0.4);
        cfg.frame_stride = 1;
        let traj = run_md(&s, Some(v), &model, &masses, &cfg).unwrap();
        for f in &traj.frames {
            let mut p = [0.0f64; 3];
            for (vi, &mi) in f.velocities.iter().zip(&m) {
                for k in 0..3 {
                    p[k] += mi * vi[k];
                }
            }
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(norm < 1e-8 * traj.frames.len() as f64, "|sum m v| = {norm}");
        }
    }

    #[test]
    fn min_distance_rule_fires() {
        let s = cluster(2, 0.5);
        let cfg = MdConfig {
            rules: StabilityRules::ammonia(),
            ..nve_cfg(10, 0.5)
        };
        let traj =
            run_md(&s, Some(vec![[0.0; 3]; 2]), &ZeroForces, &MassTable::builtin(), &cfg).unwrap();
        assert_eq!(traj.failure.as_deref(), Some("min_distance"));
        assert_eq!(traj.stable_steps, 0);
    }

    #[test]
    fn determinism_bitwise() {
        let s = cluster(4, 2.0);
        let model = Springs {
            k: 15.0,
            centers: s.positions.clone(),
        };
        let cfg = MdConfig {
            ensemble: MdEnsemble::Nvt,
            ..nve_cfg(500, 0.5)
        };
        let masses = MassTable::builtin();
        let a = run_md(&s, None, &model, &masses, &cfg).unwrap();
        let b = run_md(&s, None, &model, &masses, &cfg).unwrap();
        let fa = a.frames.last().unwrap();
        let fb = b.frames.last().unwrap();
        assert_eq!(fa.positions, fb.positions);
        assert_eq!(fa.velocities, fb.velocities);
        assert_eq!(fa.energy.to_bits(), fb.energy.to_bits());
    }

    #[test]
    fn nvt_temperature_approaches_target() {
        let n = 8;
        let s = cluster(n, 2.0);
        let model = Springs {
            k: 10.0,
            centers: s.positions.clone(),
        };
        let masses = MassTable::builtin();
        let mut cfg = nve_cfg(20_000, 0.3);
        cfg.ensemble = MdEnsemble::Nvt;
        cfg.temperature = 400.0;
        cfg.frame_stride = 10;
        let traj = run_md(&s, None, &model, &masses, &cfg).unwrap();
        let m = masses.masses_for(&s).unwrap();
        let ndof = 3 * n - 3;
        let skip = traj.frames.len() / 5;
        let temps: Vec<f64> = traj.frames[skip..]
            .iter()
            .map(|f| kinetic_temperature(&f.velocities, &m, ndof))
            .collect();
        let mean = temps.iter().sum::<f64>() / temps.len() as f64;
        assert!(
            (mean - 400.0).abs() / 400.0 < 0.15,
            "mean kinetic temperature {mean}"
        );
    }

    #[test]
    fn stability_fraction_counts() {
        let mk = |stable_steps, steps, failure: Option<&str>| Trajectory {
            frames: vec![],
            stable_steps,
            steps,
            dt: 0.5,
            failure: failure.map(String::from),
        };
        let trajs = vec![
            mk(100, 100, None),
            mk(0, 100, Some("min_distance")),
            mk(40, 100, Some("max_distance")),
            mk(100, 100, None),
        ];
        let (frac, mean_t) = stability_fraction(&trajs);
        assert!((frac - 0.5).abs() < 1e-12);
        assert!((mean_t - (100.0 + 0.0 + 40.0 + 100.0) / 4.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn half_fail_at_step_zero() {
        let mk = |stable_steps, failure: Option<&str>| Trajectory {
            frames: vec![],
            stable_steps,
            steps: 200,
            dt: 0.5,
            failure: failure.map(String::from),
        };
        let trajs = vec![mk(200, None), mk(0, Some("min_distance"))];
        let (frac, mean_t) = stability_fraction(&trajs);
        assert_eq!(frac, 0.5);
        assert!((mean_t - 200.0 * 0.5 / 2.0).abs() < 1e-12);
    }
}
