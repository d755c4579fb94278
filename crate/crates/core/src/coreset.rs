//! K-Center Greedy selection under the Euclidean metric on embedding rows,
//! an exhaustive k-center solver for small instances, and the cover radius.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed;

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance between rows `i` and `j`.
pub fn d_phi(emb: &Array2<f64>, i: usize, j: usize) -> Result<f64> {
    let n = emb.nrows();
    for index in [i, j] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
    }
    Ok(dist(emb.row(i), emb.row(j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pick {
    pub index: usize,
    /// Distance to the nearest labeled row when picked; infinite for a cold start.
    pub min_dist: f64,
}

/// Labeled set plus per-row distance to the nearest labeled row.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    labeled: Vec<usize>,
    is_labeled: Vec<bool>,
    min_dist: Vec<f64>,
    trace: Vec<Pick>,
}

impl SelectionState {
    pub fn new(emb: &Array2<f64>, initial: &[usize]) -> Result<Self> {
        let n = emb.nrows();
        let mut state = Self {
            labeled: Vec::with_capacity(initial.len()),
            is_labeled: vec![false; n],
            min_dist: vec![f64::INFINITY; n],
            trace: Vec::new(),
        };
        for &i in initial {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if !state.is_labeled[i] {
                state.add(emb, i);
            }
        }
        Ok(state)
    }

    fn add(&mut self, emb: &Array2<f64>, index: usize) {
        self.is_labeled[index] = true;
        self.labeled.push(index);
        let center = emb.row(index);
        self.min_dist
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(dist(emb.row(i), center)));
    }

    /// Farthest unlabeled row; ties go to the lowest index.
    fn farthest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in 0..self.min_dist.len() {
            if self.is_labeled[i] {
                continue;
            }
            if best.is_none_or(|b| self.min_dist[i] > self.min_dist[b]) {
                best = Some(i);
            }
        }
        best
    }

    /// Greedily add `k` rows. With nothing labeled yet, the first row is the
    /// head of a seeded permutation.
    pub fn extend(&mut self, emb: &Array2<f64>, k: usize, cold_start_seed: u64) -> Result<()> {
        let available = self.is_labeled.iter().filter(|l| !**l).count();
        if k > available {
            return Err(Error::BudgetTooLarge { budget: k, available });
        }
        for _ in 0..k {
            let index = if self.labeled.is_empty() {
                cold_start_row(emb.nrows(), cold_start_seed)
            } else {
                self.farthest().expect("budget checked")
            };
            self.trace.push(Pick {
                index,
                min_dist: self.min_dist[index],
            });
            self.add(emb, index);
        }
        Ok(())
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn min_dist(&self) -> &[f64] {
        &self.min_dist
    }

    pub fn trace(&self) -> &[Pick] {
        &self.trace
    }

    /// Largest distance from any row to the labeled set.
    pub fn radius(&self) -> f64 {
        self.min_dist.iter().copied().fold(0.0, f64::max)
    }
}

/// First row of the seeded permutation of `0..n`.
pub fn cold_start_row(n: usize, seed: u64) -> usize {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    order[0]
}

pub fn k_center_greedy(
    emb: &Array2<f64>,
    initial: &[usize],
    k: usize,
    cold_start_seed: u64,
) -> Result<SelectionState> {
    let mut state = SelectionState::new(emb, initial)?;
    state.extend(emb, k, cold_start_seed)?;
    Ok(state)
}

/// `max_i min_{j in labeled} d(i, j)`.
pub fn cover_radius(emb: &Array2<f64>, labeled: &[usize]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeled);
    }
    Ok(SelectionState::new(emb, labeled)?.radius())
}

pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exhaustive k-center: the minimum cover radius over all sets of `k` rows
/// added to `initial`, and the lexicographically first set attaining it.
pub fn brute_force_k_center(
    emb: &Array2<f64>,
    initial: &[usize],
    k: usize,
) -> Result<(f64, Vec<usize>)> {
    let base = SelectionState::new(emb, initial)?;
    let candidates: Vec<usize> = (0..emb.nrows()).filter(|&i| !base.is_labeled[i]).collect();
    if k > candidates.len() {
        return Err(Error::BudgetTooLarge {
            budget: k,
            available: candidates.len(),
        });
    }
    let count = binomial(candidates.len(), k);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge(count));
    }
    let n = emb.nrows();
    let dmat: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist(emb.row(i), emb.row(j))).collect())
        .collect();

    let mut best = (f64::INFINITY, Vec::new());
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let radius = (0..n)
            .map(|i| {
                combo
                    .iter()
                    .map(|&c| dmat[i][candidates[c]])
                    .fold(base.min_dist[i], f64::min)
            })
            .fold(0.0, f64::max);
        if radius < best.0 || best.0.is_infinite() && best.1.len() < k {
            best = (radius, combo.iter().map(|&c| candidates[c]).collect());
        }
        // next combination in lexicographic order
        let Some(pos) = (0..k).rev().find(|&p| combo[p] < candidates.len() - k + p) else {
            break;
        };
        combo[pos] += 1;
        for q in pos + 1..k {
            combo[q] = combo[q - 1] + 1;
        }
    }
    if k == 0 {
        best.0 = base.radius();
    }
    Ok(best)
}
