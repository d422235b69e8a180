//! Sorting recovered vertex directions into a chain.
//!
//! Each direction seeds a greedy nearest-neighbour chain. When the
//! directions are close to the true vertex directions, the chain from one
//! endpoint is the reversal of the chain from the other, so the chain with
//! the best palindrome match against the others is selected.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered tuple containing each of `0..len` once.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(v: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; v.len()];
        for &x in &v {
            if x >= v.len() || seen[x] {
                return Err(Error::Config(format!("{v:?} is not a permutation")));
            }
            seen[x] = true;
        }
        Ok(Self(v))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// How two candidate directions are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// `⟨a, b⟩ / (||a|| ||b||)`.
    #[default]
    Signed,
    /// `|⟨a, b⟩| / (||a|| ||b||)`, which treats each vector as a line.
    Absolute,
}

pub fn cosine_matrix(vectors: &[DVector<f64>], sim: Similarity) -> DMatrix<f64> {
    let n = vectors.len();
    DMatrix::from_fn(n, n, |i, j| {
        let c = vectors[i].dot(&vectors[j]) / (vectors[i].norm() * vectors[j].norm());
        match sim {
            Similarity::Signed => c,
            Similarity::Absolute => c.abs(),
        }
    })
}

fn chain_from(s: &DMatrix<f64>, j0: usize) -> Permutation {
    let n = s.nrows();
    let mut visited = vec![false; n];
    let mut chain = Vec::with_capacity(n);
    let mut cur = j0;
    visited[cur] = true;
    chain.push(cur);
    for _ in 1..n {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if visited[j] {
                continue;
            }
            // Strict comparison keeps the lowest index on ties.
            if best.is_none_or(|b| s[(cur, j)] > s[(cur, b)]) {
                best = Some(j);
            }
        }
        cur = best.expect("an unvisited index remains");
        visited[cur] = true;
        chain.push(cur);
    }
    Permutation(chain)
}

/// Greedy chain: from `j0`, repeatedly step to the most similar unvisited vector.
pub fn chain_build(vectors: &[DVector<f64>], j0: usize, sim: Similarity) -> Result<Permutation> {
    if j0 >= vectors.len() {
        return Err(Error::Config(format!("start index {j0} out of range for {} vectors", vectors.len())));
    }
    Ok(chain_from(&cosine_matrix(vectors, sim), j0))
}

/// Number of positions where `a` agrees with the reversal of `b`.
pub fn psim(a: &Permutation, b: &Permutation) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("permutations of lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.0.iter().zip(b.0.iter().rev()).filter(|(x, y)| x == y).count())
}

/// Best palindrome similarity of `p` against every member of `set`, `p` included.
pub fn palindromicity(set: &[Permutation], p: &Permutation) -> Result<usize> {
    let mut best = None;
    for nu in set {
        let s = psim(p, nu)?;
        best = Some(best.map_or(s, |b: usize| b.max(s)));
    }
    best.ok_or_else(|| Error::Config("palindromicity of an empty set".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub permutation: Permutation,
    /// Start index of the winning chain.
    pub start: usize,
    /// Exactly one unordered pair of chains are reversals of each other.
    pub success: bool,
    pub palindromic_pairs: usize,
    pub chains: Vec<Permutation>,
    pub scores: Vec<usize>,
}

pub fn best_ordering(vectors: &[DVector<f64>], sim: Similarity) -> Result<OrderingResult> {
    if vectors.len() < 2 {
        return Err(Error::Config(format!("need at least 2 vectors, got {}", vectors.len())));
    }
    let s = cosine_matrix(vectors, sim);
    let chains: Vec<Permutation> = (0..vectors.len()).map(|j| chain_from(&s, j)).collect();
    let scores = chains
        .iter()
        .map(|c| palindromicity(&chains, c))
        .collect::<Result<Vec<_>>>()?;
    let mut start = 0;
    for (j, &sc) in scores.iter().enumerate() {
        if sc > scores[start] {
            start = j;
        }
    }
    let palindromic_pairs = count_pairs(&chains);
    Ok(OrderingResult {
        permutation: chains[start].clone(),
        start,
        success: palindromic_pairs == 1,
        palindromic_pairs,
        chains,
        scores,
    })
}

/// Distinct unordered pairs `{π, reverse(π)}` present among `chains`.
fn count_pairs(chains: &[Permutation]) -> usize {
    let mut distinct: Vec<&Permutation> = Vec::new();
    for c in chains {
        if !distinct.contains(&c) {
            distinct.push(c);
        }
    }
    let members = distinct
        .iter()
        .filter(|c| distinct.contains(&&c.reversed()))
        .count();
    members / 2
}
