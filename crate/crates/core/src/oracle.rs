//! Analytic ground-truth potentials standing in for ab-initio labeling,
//! plus the initial-dataset and test-ladder generators.
//!
//! Two systems are provided. The inversion molecule is a central atom with
//! three satellites and a symmetric double well in the out-of-plane
//! displacement of the central atom; it has two mirror-image minima at
//! energy zero separated by a configurable barrier. The pair cluster is a
//! Morse-bonded blob of identical atoms whose energy zero is fixed by a
//! deterministic relaxation at construction.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSample, Structure};
use crate::error::{Error, Result};
use crate::md::{self, ForceProvider, MassTable, MdConfig, MdEnsemble, StabilityRules};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionParams {
    /// Barrier height B = a·h0⁴, kcal/mol.
    pub barrier: f64,
    /// Equilibrium bond length l0, Å.
    pub bond_length: f64,
    /// Bond stiffness, kcal/mol/Å².
    pub bond_stiffness: f64,
    /// Satellite-frame stiffness on squared distances, kcal/mol/Å⁴.
    pub frame_stiffness: f64,
    /// Well position h0: out-of-plane displacement of the minima, Å.
    pub well_offset: f64,
    pub z_center: u32,
    pub z_satellite: u32,
}

impl Default for InversionParams {
    fn default() -> Self {
        InversionParams {
            barrier: 20.0,
            bond_length: 1.0,
            bond_stiffness: 300.0,
            frame_stiffness: 75.0,
            well_offset: 0.45,
            z_center: 7,
            z_satellite: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairClusterParams {
    pub atom_count: usize,
    /// Morse well depth, kcal/mol.
    pub well_depth: f64,
    /// Morse width parameter, 1/Å.
    pub well_width: f64,
    /// Morse equilibrium distance, Å.
    pub eq_distance: f64,
    pub z: u32,
}

impl Default for PairClusterParams {
    fn default() -> Self {
        PairClusterParams {
            atom_count: 8,
            well_depth: 5.0,
            well_width: 1.5,
            eq_distance: 2.5,
            z: 18,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    InversionMolecule(InversionParams),
    PairCluster(PairClusterParams),
}

impl OracleSpec {
    pub fn inversion_default() -> Self {
        OracleSpec::InversionMolecule(InversionParams::default())
    }

    pub fn pair_cluster_default() -> Self {
        OracleSpec::PairCluster(PairClusterParams::default())
    }

    /// Atomic numbers this oracle labels, with masses (amu).
    pub fn species(&self) -> Vec<(u32, f64)> {
        match self {
            OracleSpec::InversionMolecule(p) => {
                vec![(p.z_satellite, 1.008), (p.z_center, 14.007)]
            }
            OracleSpec::PairCluster(p) => vec![(p.z, 39.948)],
        }
    }

    pub fn mass_table(&self) -> MassTable {
        let mut t = MassTable::builtin();
        for (z, m) in self.species() {
            t = t.with(z, m);
        }
        t
    }

    pub fn barrier(&self) -> f64 {
        match self {
            OracleSpec::InversionMolecule(p) => p.barrier,
            OracleSpec::PairCluster(p) => p.well_depth,
        }
    }

    fn check_species(&self, s: &Structure) -> Result<()> {
        let registry: Vec<u32> = self.species().iter().map(|&(z, _)| z).collect();
        for &z in &s.atomic_numbers {
            if !registry.contains(&z) {
                return Err(Error::SpeciesMismatch {
                    z,
                    registry: registry.clone(),
                });
            }
        }
        if let OracleSpec::InversionMolecule(p) = self {
            let centers = s.atomic_numbers.iter().filter(|&&z| z == p.z_center).count();
            let sats = s.atomic_numbers.iter().filter(|&&z| z == p.z_satellite).count();
            if s.len() != 4 || centers != 1 || sats != 3 || s.atomic_numbers[0] != p.z_center {
                return Err(Error::Config(
                    "inversion molecule expects [center, satellite, satellite, satellite]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Analytic energy and forces (F = -∂E/∂r, hand-coded).
    pub fn evaluate(&self, s: &Structure) -> Result<(f64, Vec<[f64; 3]>)> {
        self.check_species(s)?;
        match self {
            OracleSpec::InversionMolecule(p) => Ok(inversion_energy_forces(p, s)),
            OracleSpec::PairCluster(p) => {
                let (e, f) = morse_energy_forces(p, s);
                Ok((e - self.pair_cluster_offset(p), f))
            }
        }
    }

    fn pair_cluster_offset(&self, p: &PairClusterParams) -> f64 {
        let relaxed = relaxed_cluster(p);
        morse_energy_forces(p, &relaxed).0
    }

    /// A structure at (one of) the oracle's energy minima.
    pub fn equilibrium_structure(&self) -> Structure {
        match self {
            OracleSpec::InversionMolecule(p) => inversion_geometry(p, p.well_offset),
            OracleSpec::PairCluster(p) => relaxed_cluster(p),
        }
    }
}

impl ForceProvider for OracleSpec {
    fn evaluate(&self, s: &Structure) -> Result<(f64, Vec<[f64; 3]>)> {
        OracleSpec::evaluate(self, s)
    }
}

/// Symmetric geometry with the central atom displaced h out of the
/// satellite plane. h = well_offset gives a minimum, h = 0 the transition
/// state.
pub fn inversion_geometry(p: &InversionParams, h: f64) -> Structure {
    let rho = (p.bond_length.powi(2) - h * h).max(0.0).sqrt();
    let mut positions = vec![[0.0, 0.0, h]];
    for i in 0..3 {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
        positions.push([rho * angle.cos(), rho * angle.sin(), 0.0]);
    }
    Structure::new(vec![p.z_center, p.z_satellite, p.z_satellite, p.z_satellite], positions)
        .expect("valid geometry")
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: [f64; 3], c: f64) -> [f64; 3] {
    [a[0] * c, a[1] * c, a[2] * c]
}

fn add_into(target: &mut [f64; 3], v: [f64; 3]) {
    target[0] += v[0];
    target[1] += v[1];
    target[2] += v[2];
}

/// Energy terms: harmonic bonds |X-Y_i| to l0; a frame term on squared
/// satellite distances tied to the current out-of-plane height so the
/// symmetric inversion path costs only the double well; the quartic double
/// well a·(h²-h0²)² itself. Gradients below follow the same decomposition.
fn inversion_energy_forces(p: &InversionParams, s: &Structure) -> (f64, Vec<[f64; 3]>) {
    let l0 = p.bond_length;
    let kb = p.bond_stiffness;
    let kd = p.frame_stiffness;
    let h0 = p.well_offset;
    let a = p.barrier / h0.powi(4);

    let x = s.positions[0];
    let y = [s.positions[1], s.positions[2], s.positions[3]];

    let mut energy = 0.0;
    let mut grad = vec![[0.0f64; 3]; 4];

    // bonds
    for (i, yi) in y.iter().enumerate() {
        let d = sub(x, *yi);
        let r = dot(d, d).sqrt();
        let dr = r - l0;
        energy += 0.5 * kb * dr * dr;
        let g = scale(d, kb * dr / r);
        add_into(&mut grad[0], g);
        add_into(&mut grad[i + 1], scale(g, -1.0));
    }

    // out-of-plane height h = n·(x-c)/sqrt(|n|² + eps)
    let u = sub(y[1], y[0]);
    let v = sub(y[2], y[0]);
    let n = cross(u, v);
    let c = [
        (y[0][0] + y[1][0] + y[2][0]) / 3.0,
        (y[0][1] + y[1][1] + y[2][1]) / 3.0,
        (y[0][2] + y[1][2] + y[2][2]) / 3.0,
    ];
    let d = sub(x, c);
    let n2 = dot(n, n);
    let q = (n2 + 1e-18).sqrt();
    let h = dot(n, d) / q;

    // dh/dr: satellite contributions go through both n and the centroid
    let g1 = scale(d, 1.0 / q); // cotangent for the n·d part
    let hq2 = h / (q * q);
    let gq = scale(n, hq2); // cotangent for the |n| part
    let eff = sub(g1, gq); // combined cotangent applied to dn
    let umv = sub(u, v);
    let dh = [
        scale(n, 1.0 / q), // dh/dx
        {
            let mut t = cross(umv, eff);
            add_into(&mut t, scale(n, -1.0 / (3.0 * q)));
            t
        },
        {
            let mut t = cross(v, eff);
            add_into(&mut t, scale(n, -1.0 / (3.0 * q)));
            t
        },
        {
            let mut t = cross(eff, u);
            add_into(&mut t, scale(n, -1.0 / (3.0 * q)));
            t
        },
    ];

    // frame: squared satellite distances tied to 3(l0² - h²)
    let target = 3.0 * (l0 * l0 - h * h);
    let mut de_dh = 0.0;
    for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
        let dij = sub(y[i], y[j]);
        let t = dot(dij, dij) - target;
        energy += 0.5 * kd * t * t;
        let g = scale(dij, 2.0 * kd * t);
        add_into(&mut grad[i + 1], g);
        add_into(&mut grad[j + 1], scale(g, -1.0));
        de_dh += kd * t * 6.0 * h;
    }

    // double well
    let w = h * h - h0 * h0;
    energy += a * w * w;
    de_dh += 4.0 * a * h * w;

    for (gi, dhi) in grad.iter_mut().zip(&dh) {
        add_into(gi, scale(*dhi, de_dh));
    }

    let forces = grad.iter().map(|g| scale(*g, -1.0)).collect();
    (energy, forces)
}

fn morse_energy_forces(p: &PairClusterParams, s: &Structure) -> (f64, Vec<[f64; 3]>) {
    let n = s.len();
    let mut energy = 0.0;
    let mut forces = vec![[0.0f64; 3]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = s.displacement(i, j);
            let r = dot(d, d).sqrt();
            let e = (-p.well_width * (r - p.eq_distance)).exp();
            let m = 1.0 - e;
            energy += p.well_depth * (m * m - 1.0);
            // dE/dr = 2 depth width e (1 - e)
            let de_dr = 2.0 * p.well_depth * p.well_width * e * m;
            let g = scale(d, de_dr / r); // dE/d(r_j)
            add_into(&mut forces[i], g);
            add_into(&mut forces[j], scale(g, -1.0));
        }
    }
    (energy, forces)
}

/// Steepest-descent relaxation of a deterministic compact seed; fixes the
/// cluster's energy reference.
fn relaxed_cluster(p: &PairClusterParams) -> Structure {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a75_31c4);
    let spread = p.eq_distance * 0.8;
    let positions: Vec<[f64; 3]> = (0..p.atom_count)
        .map(|i| {
            // loose cubic lattice with a deterministic jitter
            let gx = (i % 2) as f64;
            let gy = ((i / 2) % 2) as f64;
            let gz = (i / 4) as f64;
            [
                gx * spread + 0.05 * rng.gen::<f64>(),
                gy * spread + 0.05 * rng.gen::<f64>(),
                gz * spread + 0.05 * rng.gen::<f64>(),
            ]
        })
        .collect();
    let mut s = Structure::new(vec![p.z; p.atom_count], positions).expect("cluster seed");
    let mut step = 0.02;
    let (mut e, mut f) = morse_energy_forces(p, &s);
    for _ in 0..20_000 {
        let mut trial = s.clone();
        let fmax = f
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()));
        if fmax < 1e-10 {
            break;
        }
        for (pos, fi) in trial.positions.iter_mut().zip(&f) {
            for k in 0..3 {
                pos[k] += step * fi[k] / fmax.max(1.0);
            }
        }
        let (et, ft) = morse_energy_forces(p, &trial);
        if et < e {
            s = trial;
            e = et;
            f = ft;
            step = (step * 1.1).min(0.05);
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    s
}

/// Low-temperature oracle MD from one well, subsampled to n frames, all
/// below the energy cap (default barrier/5). The other well and the
/// barrier region stay unseen.
pub fn generate_initial_dataset(
    spec: &OracleSpec,
    n: usize,
    t_sample: f64,
    seed: u64,
    energy_cap: Option<f64>,
) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    let cap = energy_cap.unwrap_or(spec.barrier() / 5.0);
    let start = spec.equilibrium_structure();
    let masses = spec.mass_table();

    let stride = 25;
    let mut samples = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let mut run_seed = seed;
    while samples.len() < n {
        attempts += 1;
        if attempts > 40 {
            return Err(Error::Sampling(format!(
                "energy cap {cap} kcal/mol unreachable at T = {t_sample} K; lower the temperature"
            )));
        }
        let cfg = MdConfig {
            ensemble: MdEnsemble::Nvt,
            temperature: t_sample,
            dt: 0.5,
            steps: stride * (n + 8),
            thermostat_mass: None,
            rules: StabilityRules::none(),
            frame_stride: stride,
            seed: run_seed,
            remove_com_momentum: true,
        };
        run_seed = run_seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let traj = md::run_md(&start, None, spec, &masses, &cfg)?;
        for frame in traj.frames.iter().skip(1) {
            if samples.len() >= n {
                break;
            }
            let s = Structure::new(start.atomic_numbers.clone(), frame.positions.clone())?;
            let (e, f) = spec.evaluate(&s)?;
            if e < cap {
                samples.push(LabeledSample {
                    id: format!("init-{:04}", samples.len()),
                    structure: s,
                    energy: e,
                    forces: f,
                    provenance: "initial".into(),
                });
            }
        }
    }
    Ok(samples)
}

/// Structures binned uniformly by oracle energy from 0 to the ceiling
/// (default 1.2·barrier), `per_bin` each, found by randomized perturbation
/// search. Bins that stay short within the budget are left short.
pub fn generate_test_ladder(
    spec: &OracleSpec,
    bins: usize,
    per_bin: usize,
    seed: u64,
    ceiling: Option<f64>,
) -> Result<Vec<LabeledSample>> {
    if bins == 0 {
        return Err(Error::Config("bins must be >= 1".into()));
    }
    let ceiling = ceiling.unwrap_or(1.2 * spec.barrier());
    let width = ceiling / bins as f64;
    let eq = spec.equilibrium_structure();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; bins];
    let mut out = Vec::with_capacity(bins * per_bin);
    if per_bin == 0 {
        return Ok(out);
    }

    let budget = 4000 * bins * per_bin;
    let mut idx = 0usize;
    for _ in 0..budget {
        if out.len() >= bins * per_bin {
            break;
        }
        // perturbation scale swept so that all energy bins get visited
        let scale: f64 = rng.gen_range(0.01..0.6);
        let mut s = eq.clone();
        for pos in s.positions.iter_mut() {
            for k in pos.iter_mut() {
                *k += scale * (rng.gen::<f64>() * 2.0 - 1.0);
            }
        }
        let (e, f) = match spec.evaluate(&s) {
            Ok(ef) => ef,
            Err(_) => continue,
        };
        if !(0.0..ceiling).contains(&e) {
            continue;
        }
        let bin = ((e / width) as usize).min(bins - 1);
        if counts[bin] >= per_bin {
            continue;
        }
        counts[bin] += 1;
        out.push(LabeledSample {
            id: format!("test-{idx:04}"),
            structure: s,
            energy: e,
            forces: f,
            provenance: format!("ladder-bin{bin}"),
        });
        idx += 1;
    }
    out.sort_by(|a, b| a.energy.partial_cmp(&b.energy).unwrap());
    Ok(out)
}
