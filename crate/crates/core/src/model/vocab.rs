use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../../assets/vocab.json");

/// Word vectors with a seeded hash fallback for unknown words.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    dim: usize,
    hash_seed: u64,
    words: BTreeMap<String, Vec<f64>>,
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

impl Vocabulary {
    pub fn new(dim: usize, hash_seed: u64, words: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (w, v) in words {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            // unit vectors stay bit-exact
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v = if (n - 1.0).abs() <= 1e-12 { v } else { normalized(v)? };
            out.insert(w.to_lowercase(), v);
        }
        Ok(Self {
            dim,
            hash_seed,
            words: out,
        })
    }

    /// The word table bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("bundled vocabulary is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serializes")
    }

    pub fn digest(&self) -> String {
        crate::datagen::digest(self.to_json().as_bytes())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    /// Table vector, or a unit vector drawn from a generator seeded by the
    /// hash of `(hash_seed, word)`.
    pub fn word_vector(&self, word: &str) -> Vec<f64> {
        if let Some(v) = self.words.get(word) {
            return v.clone();
        }
        let mut h = Sha256::new();
        h.update(self.hash_seed.to_le_bytes());
        h.update(word.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalized(v).expect("gaussian draw is non-zero")
    }

    /// Mean of lowercase word vectors, renormalized.
    pub fn embed(&self, query: &str) -> Result<Vec<f64>> {
        let lower = query.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let mut acc = vec![0.0; self.dim];
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.word_vector(t)) {
                *a += v;
            }
        }
        normalized(acc)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = Map::new();
        for (w, v) in &self.words {
            m.insert(w.clone(), Value::from(v.clone()));
        }
        m.insert("hash_seed".into(), Value::from(self.hash_seed));
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let m = Map::<String, Value>::deserialize(d)?;
        let mut hash_seed = 0;
        let mut words = BTreeMap::new();
        for (k, v) in m {
            if k == "hash_seed" {
                hash_seed = v
                    .as_u64()
                    .ok_or_else(|| D::Error::custom("hash_seed must be an integer"))?;
                continue;
            }
            let vec: Vec<f64> = serde_json::from_value(v).map_err(D::Error::custom)?;
            words.insert(k, vec);
        }
        let dim = words.values().next().map_or(0, Vec::len);
        Vocabulary::new(dim, hash_seed, words).map_err(D::Error::custom)
    }
}
