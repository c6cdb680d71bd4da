//! Scene, context, and object-belief domain types.

use crate::error::{CoadError, Result};
use crate::vocab::Vocab;
use serde::{Deserialize, Serialize};

/// The image analog: ground-truth binary object presence plus a seed
/// identity that names the scene in records and derived RNG streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub z_star: Vec<bool>,
    pub seed: u64,
}

impl Scene {
    pub fn new(z_star: Vec<bool>, seed: u64) -> Self {
        Scene { z_star, seed }
    }

    pub fn categories(&self) -> usize {
        self.z_star.len()
    }

    pub fn is_present(&self, c: usize) -> bool {
        self.z_star[c]
    }

    /// Ground truth as an [`ObjectVector`].
    pub fn truth(&self) -> ObjectVector {
        ObjectVector {
            z: self.z_star.clone(),
        }
    }

    pub fn present_categories(&self) -> Vec<usize> {
        (0..self.z_star.len()).filter(|&c| self.z_star[c]).collect()
    }

    pub fn absent_categories(&self) -> Vec<usize> {
        (0..self.z_star.len())
            .filter(|&c| !self.z_star[c])
            .collect()
    }
}

/// Token sequence (prompt plus generated so far); grows only by appending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    tokens: Vec<usize>,
}

impl Context {
    /// Validates all indices against the vocabulary.
    pub fn new(tokens: Vec<usize>, vocab: &Vocab) -> Result<Self> {
        for &t in &tokens {
            if !vocab.contains(t) {
                return Err(CoadError::LengthMismatch {
                    what: "context token index",
                    expected: vocab.len(),
                    got: t,
                });
            }
        }
        Ok(Context { tokens })
    }

    /// A context holding only the BOS token.
    pub fn bos() -> Self {
        Context {
            tokens: vec![crate::vocab::BOS],
        }
    }

    pub fn push(&mut self, tok: usize) {
        self.tokens.push(tok);
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A binary object-presence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectVector {
    pub z: Vec<bool>,
}

impl ObjectVector {
    pub fn new(z: Vec<bool>) -> Self {
        ObjectVector { z }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// The same vector cast to reals.
    pub fn to_belief(&self) -> ObjectBelief {
        ObjectBelief {
            z_tilde: self.z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Detector output: per-category presence probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBelief {
    pub z_tilde: Vec<f64>,
}

impl ObjectBelief {
    /// Validates that every entry lies in [0, 1].
    pub fn new(z_tilde: Vec<f64>) -> Result<Self> {
        for &p in &z_tilde {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(CoadError::Config(format!(
                    "belief entries must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(ObjectBelief { z_tilde })
    }

    pub fn len(&self) -> usize {
        self.z_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_tilde.is_empty()
    }

    /// Whether every entry is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.z_tilde.iter().all(|&p| p == 0.0 || p == 1.0)
    }
}

/// Anything usable as the object-conditioning input of a model: a hard
/// binary vector or the detector's soft belief.
pub trait Conditioning {
    fn dim(&self) -> usize;
    /// Coefficient multiplying the category's conditioning weights.
    fn coeff(&self, c: usize) -> f64;
}

impl Conditioning for ObjectVector {
    fn dim(&self) -> usize {
        self.z.len()
    }

    fn coeff(&self, c: usize) -> f64 {
        if self.z[c] {
            1.0
        } else {
            0.0
        }
    }
}

impl Conditioning for ObjectBelief {
    fn dim(&self) -> usize {
        self.z_tilde.len()
    }

    fn coeff(&self, c: usize) -> f64 {
        self.z_tilde[c]
    }
}
