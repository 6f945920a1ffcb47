//! Invariant atomic descriptors and the MLP potential.
//!
//! Features are per-species sums of Gaussian radial basis functions under
//! a cosine cutoff, so they are invariant to rotations, translations and
//! permutations of identical atoms, and smooth in the positions. The MLP
//! maps features through tanh hidden layers to a per-atom latent row; the
//! energy is a linear readout summed over atoms, forces are the negative
//! position gradient of that sum, and head variants add per-atom variances
//! (mean-variance estimation) or pooled evidential parameters.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sum, Tape, Var};
use crate::data::Structure;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorConfig {
    /// Neighbor cutoff, Å.
    pub cutoff: f64,
    /// Radial basis count per species channel.
    pub n_radial: usize,
    /// Center of the first radial basis function, Å.
    pub r_min: f64,
    /// Basis width as a multiple of the center spacing.
    pub width_scale: f64,
    /// Atomic numbers the model accepts (sorted, deduplicated).
    pub species: Vec<u32>,
}

impl DescriptorConfig {
    pub fn new(cutoff: f64, n_radial: usize, species: Vec<u32>) -> Result<Self> {
        let mut species = species;
        species.sort_unstable();
        species.dedup();
        let cfg = DescriptorConfig {
            cutoff,
            n_radial,
            r_min: 0.5,
            width_scale: 1.0,
            species,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff <= 0.0 {
            return Err(Error::Config("descriptor cutoff must be > 0".into()));
        }
        if self.n_radial == 0 {
            return Err(Error::Config("need at least one radial basis".into()));
        }
        if self.species.is_empty() {
            return Err(Error::Config("species registry is empty".into()));
        }
        Ok(())
    }

    /// Feature width per atom: one radial block per species.
    pub fn width(&self) -> usize {
        self.species.len() * self.n_radial
    }

    fn centers(&self) -> Vec<f64> {
        if self.n_radial == 1 {
            return vec![self.r_min];
        }
        let step = (self.cutoff - self.r_min) / (self.n_radial - 1) as f64;
        (0..self.n_radial)
            .map(|i| self.r_min + step * i as f64)
            .collect()
    }

    fn gauss_inv_two_w2(&self) -> f64 {
        let step = if self.n_radial > 1 {
            (self.cutoff - self.r_min) / (self.n_radial - 1) as f64
        } else {
            self.cutoff - self.r_min
        };
        let w = (step * self.width_scale).max(1e-6);
        1.0 / (2.0 * w * w)
    }

    fn species_channel(&self, z: u32) -> Result<usize> {
        self.species
            .binary_search(&z)
            .map_err(|_| Error::SpeciesMismatch {
                z,
                registry: self.species.clone(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Standard,
    Mve,
    Evidential,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HeadKind::Standard => "standard",
            HeadKind::Mve => "mve",
            HeadKind::Evidential => "evidential",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub descriptor: DescriptorConfig,
    /// Hidden layer sizes between the features and the latent row.
    pub hidden: Vec<usize>,
    /// Latent width D (the row the GMM sees).
    pub latent: usize,
    pub head: HeadKind,
    /// Ensemble member count M (1 for single-network schemes).
    pub members: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        if self.latent == 0 {
            return Err(Error::Config("latent width must be >= 1".into()));
        }
        if self.members == 0 {
            return Err(Error::Config("need at least one member".into()));
        }
        Ok(())
    }

    /// Layer in/out sizes for the trunk (features -> ... -> latent).
    fn trunk_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.descriptor.width();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.latent));
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter vector with a named segment map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<Segment>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("param vector", "non-finite parameter"));
        }
        Ok(())
    }
}

fn layout_for(cfg: &ModelConfig) -> Vec<Segment> {
    let mut layout = Vec::new();
    let mut offset = 0usize;
    let push = |name: String, len: usize, layout: &mut Vec<Segment>, offset: &mut usize| {
        layout.push(Segment {
            name,
            offset: *offset,
            len,
        });
        *offset += len;
    };
    for (i, (nin, nout)) in cfg.trunk_dims().into_iter().enumerate() {
        push(format!("w{i}"), nin * nout, &mut layout, &mut offset);
        push(format!("b{i}"), nout, &mut layout, &mut offset);
    }
    push("energy_w".into(), cfg.latent, &mut layout, &mut offset);
    push("energy_b".into(), 1, &mut layout, &mut offset);
    match cfg.head {
        HeadKind::Standard => {}
        HeadKind::Mve => {
            push("var_w".into(), cfg.latent, &mut layout, &mut offset);
            push("var_b".into(), 1, &mut layout, &mut offset);
        }
        HeadKind::Evidential => {
            push("evid_w".into(), 3 * cfg.latent, &mut layout, &mut offset);
            push("evid_b".into(), 3, &mut layout, &mut offset);
        }
    }
    layout
}

/// Fan-in-scaled uniform initialization; biases start at zero.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamVector {
    let layout = layout_for(cfg);
    let total: usize = layout.iter().map(|s| s.len).sum();
    let mut values = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for seg in &layout {
        if seg.name.starts_with('b') || seg.name.ends_with("_b") {
            continue;
        }
        // weight matrices are (out × in) row-major; infer fan-in from shape
        let fan_in = fan_in_of(cfg, &seg.name);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in values[seg.offset..seg.offset + seg.len].iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }
    ParamVector { values, layout }
}

fn fan_in_of(cfg: &ModelConfig, name: &str) -> usize {
    if let Some(idx) = name.strip_prefix('w').and_then(|s| s.parse::<usize>().ok()) {
        return cfg.trunk_dims()[idx].0;
    }
    cfg.latent
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub members: Vec<ParamVector>,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, base_seed: u64) -> Result<Self> {
        config.validate()?;
        let members = (0..config.members)
            .map(|m| init_params(&config, member_seed(base_seed, m)))
            .collect();
        Ok(ModelBundle { config, members })
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn predict(&self, member: usize, s: &Structure, id: &str) -> Result<PotentialOutput> {
        if member >= self.members.len() {
            return Err(Error::Config(format!(
                "member {member} out of range ({} members)",
                self.members.len()
            )));
        }
        let tape = Tape::with_capacity(graph_size_hint(&self.config, s.len()));
        let positions = bind_positions(&tape, s);
        let params = bind_params(&tape, &self.members[member], false);
        let g = forward(&tape, s, &positions, &params, &self.config, true)?;
        g.into_values(id)
    }

    pub fn to_json(&self) -> Result<String> {
        let members: Vec<SerializedMember> = self
            .members
            .iter()
            .map(|p| SerializedMember {
                segments: p
                    .layout
                    .iter()
                    .map(|seg| SerializedSegment {
                        name: seg.name.clone(),
                        offset: seg.offset,
                        len: seg.len,
                        data: B64.encode(
                            p.values[seg.offset..seg.offset + seg.len]
                                .iter()
                                .flat_map(|v| v.to_le_bytes())
                                .collect::<Vec<u8>>(),
                        ),
                    })
                    .collect(),
            })
            .collect();
        let doc = SerializedBundle {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            members,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SerializedBundle =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        doc.config.validate()?;
        let mut members = Vec::with_capacity(doc.members.len());
        for m in &doc.members {
            let total: usize = m.segments.iter().map(|s| s.len).sum();
            let mut values = vec![0.0; total];
            let mut layout = Vec::with_capacity(m.segments.len());
            for seg in &m.segments {
                let bytes = B64
                    .decode(&seg.data)
                    .map_err(|e| Error::Serialization(e.to_string()))?;
                if bytes.len() != seg.len * 8 {
                    return Err(Error::Serialization(format!(
                        "segment {}: expected {} bytes, got {}",
                        seg.name,
                        seg.len * 8,
                        bytes.len()
                    )));
                }
                for (i, chunk) in bytes.chunks_exact(8).enumerate() {
                    values[seg.offset + i] = f64::from_le_bytes(chunk.try_into().unwrap());
                }
                layout.push(Segment {
                    name: seg.name.clone(),
                    offset: seg.offset,
                    len: seg.len,
                });
            }
            members.push(ParamVector { values, layout });
        }
        Ok(ModelBundle {
            config: doc.config,
            members,
        })
    }
}

pub fn member_seed(base: u64, member: usize) -> u64 {
    base.wrapping_add((member as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

#[derive(Serialize, Deserialize)]
struct SerializedBundle {
    format_version: u32,
    config: ModelConfig,
    members: Vec<SerializedMember>,
}

#[derive(Serialize, Deserialize)]
struct SerializedMember {
    segments: Vec<SerializedSegment>,
}

#[derive(Serialize, Deserialize)]
struct SerializedSegment {
    name: String,
    offset: usize,
    len: usize,
    data: String,
}

#[derive(Debug, Clone)]
pub enum HeadOutput {
    Standard,
    Mve { atom_variances: Vec<f64> },
    Evidential { nu: f64, alpha: f64, beta: f64 },
}

/// Model outputs for one structure and one member. For the evidential
/// head, `energy` doubles as γ_E.
#[derive(Debug, Clone)]
pub struct PotentialOutput {
    pub energy: f64,
    pub forces: Vec<[f64; 3]>,
    pub latent: Vec<Vec<f64>>,
    pub head: HeadOutput,
}

pub enum GraphHead<'t> {
    Standard,
    Mve {
        atom_variances: Vec<Var<'t>>,
    },
    Evidential {
        nu: Var<'t>,
        alpha: Var<'t>,
        beta: Var<'t>,
    },
}

/// Tape-expression outputs; forces present when requested.
pub struct GraphOutput<'t> {
    pub energy: Var<'t>,
    pub forces: Option<Vec<[Var<'t>; 3]>>,
    pub latent: Vec<Vec<Var<'t>>>,
    pub head: GraphHead<'t>,
}

impl<'t> GraphOutput<'t> {
    pub fn into_values(self, id: &str) -> Result<PotentialOutput> {
        let energy = self.energy.value();
        let forces: Vec<[f64; 3]> = self
            .forces
            .expect("forces were not requested")
            .iter()
            .map(|f| [f[0].value(), f[1].value(), f[2].value()])
            .collect();
        if !energy.is_finite() || forces.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric(
                format!("predict({id})"),
                "non-finite energy or forces",
            ));
        }
        let latent = self
            .latent
            .iter()
            .map(|row| row.iter().map(Var::value).collect())
            .collect();
        let head = match self.head {
            GraphHead::Standard => HeadOutput::Standard,
            GraphHead::Mve { atom_variances } => HeadOutput::Mve {
                atom_variances: atom_variances.iter().map(Var::value).collect(),
            },
            GraphHead::Evidential { nu, alpha, beta } => HeadOutput::Evidential {
                nu: nu.value(),
                alpha: alpha.value(),
                beta: beta.value(),
            },
        };
        Ok(PotentialOutput {
            energy,
            forces,
            latent,
            head,
        })
    }
}

pub fn graph_size_hint(cfg: &ModelConfig, n_atoms: usize) -> usize {
    let per_atom: usize = cfg
        .trunk_dims()
        .iter()
        .map(|(i, o)| i * o + 2 * o)
        .sum::<usize>()
        + 4 * cfg.latent;
    let pairs = n_atoms * n_atoms / 2 + 1;
    let feat = pairs * cfg.descriptor.n_radial * 8 + pairs * 12;
    (feat + n_atoms * per_atom) * 4 + 1024
}

/// Positions as differentiable leaves.
pub fn bind_positions<'t>(tape: &'t Tape, s: &Structure) -> Vec<[Var<'t>; 3]> {
    s.positions
        .iter()
        .map(|p| [tape.leaf(p[0]), tape.leaf(p[1]), tape.leaf(p[2])])
        .collect()
}

/// Parameters as leaves (trainable) or constants (inference).
pub fn bind_params<'t>(tape: &'t Tape, params: &ParamVector, differentiable: bool) -> Vec<Var<'t>> {
    params
        .values
        .iter()
        .map(|&v| {
            if differentiable {
                tape.leaf(v)
            } else {
                tape.constant(v)
            }
        })
        .collect()
}

/// Per-atom descriptor rows as tape expressions, n × (species · n_radial).
pub fn featurize_graph<'t>(
    tape: &'t Tape,
    s: &Structure,
    positions: &[[Var<'t>; 3]],
    cfg: &DescriptorConfig,
) -> Result<Vec<Vec<Var<'t>>>> {
    if s.is_empty() {
        return Err(Error::EmptyStructure);
    }
    cfg.validate()?;
    let n = s.len();
    let width = cfg.width();
    let zero = tape.constant(0.0);
    let mut feats = vec![vec![zero; width]; n];
    let centers = cfg.centers();
    let inv2w2 = cfg.gauss_inv_two_w2();
    let channels: Vec<usize> = s
        .atomic_numbers
        .iter()
        .map(|&z| cfg.species_channel(z))
        .collect::<Result<_>>()?;

    for i in 0..n {
        for j in (i + 1)..n {
            // minimum-image shift fixed from values; constant within a graph
            let shift = if s.cell.is_some() {
                let raw = [
                    s.positions[j][0] - s.positions[i][0],
                    s.positions[j][1] - s.positions[i][1],
                    s.positions[j][2] - s.positions[i][2],
                ];
                let mi = s.displacement(i, j);
                [mi[0] - raw[0], mi[1] - raw[1], mi[2] - raw[2]]
            } else {
                [0.0; 3]
            };
            let r_value = {
                let d = s.displacement(i, j);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            };
            if r_value >= cfg.cutoff {
                continue;
            }
            let dx = positions[j][0] - positions[i][0] + shift[0];
            let dy = positions[j][1] - positions[i][1] + shift[1];
            let dz = positions[j][2] - positions[i][2] + shift[2];
            let r = (dx.square() + dy.square() + dz.square()).sqrt();
            let fc = ((r * (std::f64::consts::PI / cfg.cutoff)).cos() + 1.0) * 0.5;
            for (b, &c) in centers.iter().enumerate() {
                let dr = r - c;
                let g = (-(dr.square() * inv2w2)).exp() * fc;
                let fi = channels[j] * cfg.n_radial + b;
                let fj = channels[i] * cfg.n_radial + b;
                feats[i][fi] = feats[i][fi] + g;
                feats[j][fj] = feats[j][fj] + g;
            }
        }
    }
    Ok(feats)
}

/// Descriptor rows as plain values.
pub fn featurize(s: &Structure, cfg: &DescriptorConfig) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let positions = bind_positions(&tape, s);
    let feats = featurize_graph(&tape, s, &positions, cfg)?;
    Ok(feats
        .iter()
        .map(|row| row.iter().map(Var::value).collect())
        .collect())
}

fn dense_layer<'t>(
    input: &[Var<'t>],
    weights: &[Var<'t>],
    biases: &[Var<'t>],
    nout: usize,
    activate: bool,
) -> Vec<Var<'t>> {
    let nin = input.len();
    let mut out = Vec::with_capacity(nout);
    for o in 0..nout {
        let row = &weights[o * nin..(o + 1) * nin];
        let mut acc = biases[o];
        for (w, x) in row.iter().zip(input) {
            acc = w.fma(*x, acc);
        }
        out.push(if activate { acc.tanh() } else { acc });
    }
    out
}

/// Full model graph for one structure. `want_forces` adds the force
/// expressions via a nested gradient over the energy.
pub fn forward<'t>(
    tape: &'t Tape,
    s: &Structure,
    positions: &[[Var<'t>; 3]],
    params: &[Var<'t>],
    cfg: &ModelConfig,
    want_forces: bool,
) -> Result<GraphOutput<'t>> {
    cfg.validate()?;
    let layout = layout_for(cfg);
    let seg = |name: &str| -> &[Var<'t>] {
        let s = layout
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("missing segment {name}"));
        &params[s.offset..s.offset + s.len]
    };

    let feats = featurize_graph(tape, s, positions, &cfg.descriptor)?;
    let trunk = cfg.trunk_dims();

    let mut latent_rows = Vec::with_capacity(s.len());
    let mut atom_energies = Vec::with_capacity(s.len());
    let mut atom_var_raw = Vec::with_capacity(s.len());
    let mut evid_raw: Vec<[Var<'t>; 3]> = Vec::with_capacity(s.len());

    for row in &feats {
        let mut x: Vec<Var<'t>> = row.clone();
        for (li, (_, nout)) in trunk.iter().enumerate() {
            x = dense_layer(&x, seg(&format!("w{li}")), seg(&format!("b{li}")), *nout, true);
        }
        let latent = x;
        let e = dense_layer(&latent, seg("energy_w"), seg("energy_b"), 1, false)[0];
        atom_energies.push(e);
        match cfg.head {
            HeadKind::Standard => {}
            HeadKind::Mve => {
                let raw = dense_layer(&latent, seg("var_w"), seg("var_b"), 1, false)[0];
                atom_var_raw.push(raw);
            }
            HeadKind::Evidential => {
                let raw = dense_layer(&latent, seg("evid_w"), seg("evid_b"), 3, false);
                evid_raw.push([raw[0], raw[1], raw[2]]);
            }
        }
        latent_rows.push(latent);
    }

    let energy = sum(tape, &atom_energies);
    let forces = if want_forces {
        let flat: Vec<Var<'t>> = positions.iter().flat_map(|p| p.iter().copied()).collect();
        let grads = tape.grad_vars(energy, &flat)?;
        Some(
            grads
                .chunks_exact(3)
                .map(|g| [-g[0], -g[1], -g[2]])
                .collect(),
        )
    } else {
        None
    };

    let head = match cfg.head {
        HeadKind::Standard => GraphHead::Standard,
        HeadKind::Mve => GraphHead::Mve {
            atom_variances: atom_var_raw.iter().map(|r| r.softplus()).collect(),
        },
        HeadKind::Evidential => {
            let n = s.len() as f64;
            let pool = |k: usize| {
                let vals: Vec<Var<'t>> = evid_raw.iter().map(|r| r[k]).collect();
                sum(tape, &vals) / n
            };
            GraphHead::Evidential {
                nu: pool(0).softplus(),
                alpha: pool(1).softplus() + 1.0,
                beta: pool(2).softplus(),
            }
        }
    };

    Ok(GraphOutput {
        energy,
        forces,
        latent: latent_rows,
        head,
    })
}

/// One ensemble member as an MD force field.
pub struct MemberForceField<'a> {
    pub bundle: &'a ModelBundle,
    pub member: usize,
}

impl crate::md::ForceProvider for MemberForceField<'_> {
    fn evaluate(&self, s: &Structure) -> Result<(f64, Vec<[f64; 3]>)> {
        let out = self.bundle.predict(self.member, s, "md")?;
        Ok((out.energy, out.forces))
    }
}

/// Member-averaged energy and forces as an MD force field.
pub struct EnsembleMeanForceField<'a> {
    pub bundle: &'a ModelBundle,
}

impl crate::md::ForceProvider for EnsembleMeanForceField<'_> {
    fn evaluate(&self, s: &Structure) -> Result<(f64, Vec<[f64; 3]>)> {
        let m = self.bundle.member_count();
        let mut energy = 0.0;
        let mut forces = vec![[0.0f64; 3]; s.len()];
        for member in 0..m {
            let out = self.bundle.predict(member, s, "md")?;
            energy += out.energy / m as f64;
            for (acc, f) in forces.iter_mut().zip(&out.forces) {
                for k in 0..3 {
                    acc[k] += f[k] / m as f64;
                }
            }
        }
        Ok((energy, forces))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diatomic(d: f64) -> Structure {
        Structure::new(vec![1, 1], vec![[0.0, 0.0, 0.0], [d, 0.0, 0.0]]).unwrap()
    }

    fn test_config(head: HeadKind, members: usize) -> ModelConfig {
        ModelConfig {
            descriptor: DescriptorConfig::new(4.0, 5, vec![1, 7]).unwrap(),
            hidden: vec![8, 8],
            latent: 4,
            head,
            members,
        }
    }

    fn molecule() -> Structure {
        Structure::new(
            vec![7, 1, 1, 1],
            vec![
                [0.0, 0.0, 0.45],
                [0.9, 0.0, 0.0],
                [-0.45, 0.78, 0.0],
                [-0.45, -0.78, 0.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn rotated_diatomics_share_features() {
        let cfg = DescriptorConfig::new(4.0, 6, vec![1]).unwrap();
        let a = diatomic(1.1);
        let b = Structure::new(
            vec![1, 1],
            vec![[0.0, 0.0, 0.0], [0.0, 1.1 / 2f64.sqrt(), 1.1 / 2f64.sqrt()]],
        )
        .unwrap();
        let fa = featurize(&a, &cfg).unwrap();
        let fb = featurize(&b, &cfg).unwrap();
        for (ra, rb) in fa.iter().zip(&fb) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_atom_features_are_zero() {
        let cfg = DescriptorConfig::new(3.0, 4, vec![1]).unwrap();
        let s = Structure::new(vec![1, 1], vec![[0.0; 3], [10.0, 0.0, 0.0]]).unwrap();
        let f = featurize(&s, &cfg).unwrap();
        assert!(f.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn features_are_smooth_in_distance() {
        let cfg = DescriptorConfig::new(4.0, 6, vec![1]).unwrap();
        let d = 1.3;
        let eps = 1e-5;
        let f0 = featurize(&diatomic(d), &cfg).unwrap();
        let f1 = featurize(&diatomic(d + eps), &cfg).unwrap();
        let diff: f64 = f0
            .iter()
            .flatten()
            .zip(f1.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // Lipschitz estimate from the derivative at d, with margin
        let h = 1e-7;
        let fp = featurize(&diatomic(d + h), &cfg).unwrap();
        let fm = featurize(&diatomic(d - h), &cfg).unwrap();
        let lips: f64 = fp
            .iter()
            .flatten()
            .zip(fm.iter().flatten())
            .map(|(a, b)| ((a - b) / (2.0 * h)).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= (lips * 1.5 + 1e-9) * eps, "diff {diff}, bound {lips}");
    }

    #[test]
    fn translation_leaves_energy_and_forces() {
        let cfg = test_config(HeadKind::Standard, 1);
        let bundle = ModelBundle::new(cfg, 42).unwrap();
        let s = molecule();
        let out0 = bundle.predict(0, &s, "a").unwrap();
        let mut moved = s.clone();
        for p in moved.positions.iter_mut() {
            p[0] += 5.0;
            p[1] -= 2.0;
            p[2] += 0.3;
        }
        let out1 = bundle.predict(0, &moved, "b").unwrap();
        assert!((out0.energy - out1.energy).abs() < 1e-10);
        for (f0, f1) in out0.forces.iter().zip(&out1.forces) {
            for k in 0..3 {
                assert!((f0[k] - f1[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn net_force_is_zero() {
        let cfg = test_config(HeadKind::Standard, 1);
        let bundle = ModelBundle::new(cfg, 1).unwrap();
        let out = bundle.predict(0, &molecule(), "m").unwrap();
        for k in 0..3 {
            let total: f64 = out.forces.iter().map(|f| f[k]).sum();
            assert!(total.abs() < 1e-8, "net force component {total}");
        }
    }

    #[test]
    fn forces_match_energy_finite_differences() {
        let cfg = test_config(HeadKind::Standard, 1);
        let bundle = ModelBundle::new(cfg, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut s = molecule();
            for p in s.positions.iter_mut() {
                for k in p.iter_mut() {
                    *k += 0.15 * (rng.gen::<f64>() * 2.0 - 1.0);
                }
            }
            let out = bundle.predict(0, &s, "fd").unwrap();
            let h = 1e-5;
            for i in 0..s.len() {
                for k in 0..3 {
                    let mut sp = s.clone();
                    sp.positions[i][k] += h;
                    let ep = bundle.predict(0, &sp, "fd").unwrap().energy;
                    let mut sm = s.clone();
                    sm.positions[i][k] -= h;
                    let em = bundle.predict(0, &sm, "fd").unwrap().energy;
                    let fd = -(ep - em) / (2.0 * h);
                    let denom = fd.abs().max(1e-4);
                    assert!(
                        (out.forces[i][k] - fd).abs() / denom < 1e-4,
                        "force {} vs fd {}",
                        out.forces[i][k],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_invariance_and_force_covariance() {
        let cfg = test_config(HeadKind::Standard, 1);
        let bundle = ModelBundle::new(cfg, 11).unwrap();
        let s = molecule();
        let out0 = bundle.predict(0, &s, "rot").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let (a, b) = (
                rng.gen::<f64>() * std::f64::consts::TAU,
                rng.gen::<f64>() * std::f64::consts::TAU,
            );
            let (ca, sa) = (a.cos(), a.sin());
            let (cb, sb) = (b.cos(), b.sin());
            let rot = [
                [ca * cb, -sa, ca * sb],
                [sa * cb, ca, sa * sb],
                [-sb, 0.0, cb],
            ];
            let mut moved = s.clone();
            for p in moved.positions.iter_mut() {
                let q = *p;
                for k in 0..3 {
                    p[k] = rot[k][0] * q[0] + rot[k][1] * q[1] + rot[k][2] * q[2];
                }
            }
            let out = bundle.predict(0, &moved, "rot").unwrap();
            assert!((out.energy - out0.energy).abs() < 1e-8);
            for (f, f0) in out.forces.iter().zip(&out0.forces) {
                for k in 0..3 {
                    let expect = rot[k][0] * f0[0] + rot[k][1] * f0[1] + rot[k][2] * f0[2];
                    assert!((f[k] - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn evidential_constraints_hold() {
        let cfg = test_config(HeadKind::Evidential, 1);
        let bundle = ModelBundle::new(cfg, 5).unwrap();
        let out = bundle.predict(0, &molecule(), "e").unwrap();
        match out.head {
            HeadOutput::Evidential { nu, alpha, beta } => {
                assert!(nu > 0.0);
                assert!(alpha > 1.0);
                assert!(beta > 0.0);
            }
            _ => panic!("expected evidential head"),
        }
    }

    #[test]
    fn mve_variances_nonnegative() {
        let cfg = test_config(HeadKind::Mve, 1);
        let bundle = ModelBundle::new(cfg, 5).unwrap();
        let out = bundle.predict(0, &molecule(), "v").unwrap();
        match out.head {
            HeadOutput::Mve { atom_variances } => {
                assert_eq!(atom_variances.len(), 4);
                assert!(atom_variances.iter().all(|&v| v >= 0.0));
            }
            _ => panic!("expected mve head"),
        }
    }

    #[test]
    fn latent_width_matches_config() {
        let cfg = test_config(HeadKind::Standard, 2);
        let bundle = ModelBundle::new(cfg, 2).unwrap();
        for member in 0..2 {
            let out = bundle.predict(member, &molecule(), "d").unwrap();
            assert_eq!(out.latent.len(), 4);
            assert!(out.latent.iter().all(|row| row.len() == 4));
        }
    }

    #[test]
    fn serialization_roundtrip_bit_exact() {
        let cfg = test_config(HeadKind::Evidential, 3);
        let bundle = ModelBundle::new(cfg, 99).unwrap();
        let json = bundle.to_json().unwrap();
        let back = ModelBundle::from_json(&json).unwrap();
        assert_eq!(bundle.members.len(), back.members.len());
        for (a, b) in bundle.members.iter().zip(&back.members) {
            assert_eq!(a.layout, b.layout);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let s = molecule();
        let o1 = bundle.predict(0, &s, "x").unwrap();
        let o2 = back.predict(0, &s, "x").unwrap();
        assert_eq!(o1.energy.to_bits(), o2.energy.to_bits());
    }

    #[test]
    fn members_differ_by_seed() {
        let cfg = test_config(HeadKind::Standard, 2);
        let bundle = ModelBundle::new(cfg, 1234).unwrap();
        assert_ne!(bundle.members[0].values, bundle.members[1].values);
    }

    #[test]
    fn param_layout_covers_vector_exactly() {
        let cfg = test_config(HeadKind::Evidential, 1);
        let p = init_params(&cfg, 0);
        let mut expected = 0usize;
        for seg in &p.layout {
            assert_eq!(seg.offset, expected);
            expected += seg.len;
        }
        assert_eq!(expected, p.values.len());
    }
}
