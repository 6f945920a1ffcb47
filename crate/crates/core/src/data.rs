//! Atomic configurations, labeled samples, and their JSON-lines storage.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One atomic configuration: species plus Cartesian coordinates in Å.
/// An optional cell (rows are lattice vectors) marks periodic boundaries;
/// only orthorhombic cells are honored by distance computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub atomic_numbers: Vec<u32>,
    pub positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<[[f64; 3]; 3]>,
}

impl Structure {
    pub fn new(atomic_numbers: Vec<u32>, positions: Vec<[f64; 3]>) -> Result<Self> {
        if atomic_numbers.is_empty() {
            return Err(Error::EmptyStructure);
        }
        if atomic_numbers.len() != positions.len() {
            return Err(Error::Config(format!(
                "atomic_numbers ({}) and positions ({}) length mismatch",
                atomic_numbers.len(),
                positions.len()
            )));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric("structure", "non-finite position"));
        }
        Ok(Structure {
            atomic_numbers,
            positions,
            cell: None,
        })
    }

    pub fn len(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atomic_numbers.is_empty()
    }

    /// Pairwise displacement r_j - r_i, minimum-image when a cell is set.
    pub fn displacement(&self, i: usize, j: usize) -> [f64; 3] {
        let mut d = [
            self.positions[j][0] - self.positions[i][0],
            self.positions[j][1] - self.positions[i][1],
            self.positions[j][2] - self.positions[i][2],
        ];
        if let Some(cell) = &self.cell {
            for k in 0..3 {
                let l = cell[k][k];
                if l > 0.0 {
                    d[k] -= l * (d[k] / l).round();
                }
            }
        }
        d
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let d = self.displacement(i, j);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Root-mean-square deviation against a same-topology structure.
    pub fn rmsd(&self, other: &Structure) -> f64 {
        assert_eq!(self.len(), other.len());
        let mut acc = 0.0;
        for (a, b) in self.positions.iter().zip(&other.positions) {
            for k in 0..3 {
                let mut d = a[k] - b[k];
                if let Some(cell) = &self.cell {
                    let l = cell[k][k];
                    if l > 0.0 {
                        d -= l * (d / l).round();
                    }
                }
                acc += d * d;
            }
        }
        (acc / self.len() as f64).sqrt()
    }
}

/// A structure with oracle labels attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    #[serde(flatten)]
    pub structure: Structure,
    /// Potential energy, kcal/mol.
    pub energy: f64,
    /// Per-atom forces, kcal/mol/Å.
    pub forces: Vec<[f64; 3]>,
    /// Where the sample came from: "initial" or "adversarial-genK".
    pub provenance: String,
}

pub fn write_jsonl(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| Error::Serialization(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledSample =
            serde_json::from_str(&line).map_err(|e| Error::Serialization(e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_structure_rejected() {
        let err = Structure::new(vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::EmptyStructure));
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let s = Structure::new(vec![1, 1], vec![[0.0, 0.0, 0.0], [0.9, 0.0, 0.0]]).unwrap();
        let samples = vec![LabeledSample {
            id: "init-0000".into(),
            structure: s,
            energy: 1.25,
            forces: vec![[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0]],
            provenance: "initial".into(),
        }];
        write_jsonl(&path, &samples).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, "init-0000");
        assert_eq!(back[0].structure, samples[0].structure);
    }

    #[test]
    fn minimum_image_distance() {
        let mut s = Structure::new(vec![1, 1], vec![[0.5, 0.0, 0.0], [9.5, 0.0, 0.0]]).unwrap();
        s.cell = Some([[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 10.0]]);
        assert!((s.distance(0, 1) - 1.0).abs() < 1e-12);
    }
}
