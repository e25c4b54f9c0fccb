use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{ConditionError, Result};

/// Source of frozen semantic vectors for class names or words.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, name: &str) -> Option<Vec<f64>>;
}

/// Unit-norm pseudo-embeddings seeded by a hash of the name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbeddings {
    dim: usize,
    seed: u64,
}

impl HashEmbeddings {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl Default for HashEmbeddings {
    fn default() -> Self {
        Self::new(64, 0)
    }
}

impl EmbeddingProvider for HashEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, name: &str) -> Option<Vec<f64>> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Some(v)
    }
}

/// Precomputed vectors, one per line as `name<TAB>v1 v2 ...`.
#[derive(Debug, Clone, Default)]
pub struct FileEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| ConditionError::EmbeddingFile { line: i + 1, message };
            let (name, rest) = line.split_once('\t').ok_or_else(|| err("expected name<TAB>values".into()))?;
            let v = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => return Err(err(format!("expected {d} values, found {}", v.len()))),
                _ => {}
            }
            vectors.insert(name.to_string(), v);
        }
        Ok(Self { dim: dim.unwrap_or(0), vectors })
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, name: &str) -> Option<Vec<f64>> {
        self.vectors.get(name).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embeddings_are_deterministic_unit_vectors() {
        let p = HashEmbeddings::default();
        let a = p.embed("Dog").unwrap();
        assert_eq!(a, p.embed("Dog").unwrap());
        assert_ne!(a, p.embed("Cat").unwrap());
        assert_eq!(a.len(), 64);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(a, HashEmbeddings::new(64, 1).embed("Dog").unwrap());
    }

    #[test]
    fn file_embeddings_parse() {
        let p = FileEmbeddings::parse("Alarm bell ringing\t0.5 1.5\ndog\t-1 2\n").unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.embed("Alarm bell ringing").unwrap(), vec![0.5, 1.5]);
        assert!(p.embed("cat").is_none());
        assert!(FileEmbeddings::parse("a\t1 2\nb\t1\n").is_err());
        assert!(FileEmbeddings::parse("a 1 2\n").is_err());
    }
}
