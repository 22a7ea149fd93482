use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::DiffError;

/// Named, shaped parameter arrays for one trainable network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Matrix>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { entries: BTreeMap::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Inserts a new entry. Shapes are fixed once inserted.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        assert!(!self.entries.contains_key(&name), "parameter {name} already exists");
        self.entries.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix, DiffError> {
        self.entries.get(name).ok_or_else(|| DiffError::MissingParam(name.to_string()))
    }

    /// Overwrites the values of an existing entry; the shape must match.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<(), DiffError> {
        let slot = self.entries.get_mut(name).ok_or_else(|| DiffError::MissingParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(DiffError::ShapeMismatch {
                layer: name.to_string(),
                expected: slot.shape(),
                got: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Matrix::is_finite)
    }

    /// SHA-256 over names, shapes and little-endian values of the entries
    /// accepted by `filter`, in name order.
    pub fn hash_filtered(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.entries.iter().filter(|(n, _)| filter(n)) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex_digest(&h.finalize())
    }

    pub fn hash(&self) -> String {
        self.hash_filtered(|_| true)
    }

    /// Loads every entry into `graph` as a leaf.
    pub fn to_graph(&self, graph: &mut Graph) -> BTreeMap<String, Var> {
        self.entries.iter().map(|(n, m)| (n.clone(), graph.leaf(m.clone()))).collect()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Uniform Glorot initializer driven by a seeded ChaCha stream.
///
/// Entries must be requested in a fixed order for stores to be reproducible.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn glorot(&mut self, rows: usize, cols: usize) -> Matrix {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Matrix::from_vec(rows, cols, data)
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Matrix::from_vec(rows, cols, data)
    }
}
