//! NT-Xent and group contrastive losses with exact gradients.
//!
//! A batch holds `2N` embedding rows: rows `0..N` are the standard views and
//! row `i + N` is the augmented view of row `i`. Group losses use only the
//! first `N` rows as anchors; positives and denominator terms range over all
//! `2N` rows. Rows of the same patient that fall outside the anchor's group
//! are left out of the denominator.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupSet, GroupType};

/// Group identity of one standard view; its augmented twin shares it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowMeta {
    pub patient: u32,
    pub volume: u32,
    pub slice_index: u32,
}

impl RowMeta {
    pub fn same_group(&self, other: &RowMeta, group: GroupType) -> bool {
        match group {
            GroupType::Patient => self.patient == other.patient,
            GroupType::Volume => self.volume == other.volume,
            GroupType::Slice => {
                self.volume == other.volume && self.slice_index.abs_diff(other.slice_index) <= 1
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossBatch {
    z: Array2<f64>,
    meta: Vec<RowMeta>,
    labeled: GroupSet,
}

impl LossBatch {
    /// `z` must have exactly `2 * meta.len()` rows.
    pub fn new(z: Array2<f64>, meta: Vec<RowMeta>, labeled: GroupSet) -> Result<Self> {
        if z.nrows() != 2 * meta.len() {
            return Err(Error::Shape {
                expected: 2 * meta.len(),
                got: z.nrows(),
            });
        }
        Ok(Self { z, meta, labeled })
    }

    /// Number of standard views.
    pub fn n(&self) -> usize {
        self.meta.len()
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn labeled(&self) -> GroupSet {
        self.labeled
    }

    /// Metadata of any of the `2N` rows.
    pub fn row_meta(&self, row: usize) -> &RowMeta {
        &self.meta[row % self.meta.len()]
    }

    pub fn metas(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn with_embeddings(&self, z: Array2<f64>) -> Result<Self> {
        Self::new(z, self.meta.clone(), self.labeled)
    }
}

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_EPS_NORM: f64 = 1e-12;

/// Temperature and the weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    /// NT-Xent switch.
    pub lambda0: f64,
    pub lambda_patient: f64,
    pub lambda_volume: f64,
    pub lambda_slice: f64,
    pub eps_norm: f64,
}

impl Default for LossConfig {
    /// NT-Xent plus patient and volume groups at (1, 0.05, 0.35, 0).
    fn default() -> Self {
        Self::weighted(1.0, 0.05, 0.35, 0.0)
    }
}

impl LossConfig {
    pub fn weighted(lambda0: f64, patient: f64, volume: f64, slice: f64) -> Self {
        Self {
            tau: DEFAULT_TAU,
            lambda0,
            lambda_patient: patient,
            lambda_volume: volume,
            lambda_slice: slice,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }

    pub fn ntxent_only() -> Self {
        Self::weighted(1.0, 0.0, 0.0, 0.0)
    }

    pub fn lambda(&self, group: GroupType) -> f64 {
        match group {
            GroupType::Patient => self.lambda_patient,
            GroupType::Volume => self.lambda_volume,
            GroupType::Slice => self.lambda_slice,
        }
    }

    /// Groups with a positive weight; these drive the batch sampler.
    pub fn groups(&self) -> GroupSet {
        GroupType::ALL
            .into_iter()
            .filter(|&g| self.lambda(g) > 0.0)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidLossConfig("tau must be positive".into()));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::InvalidLossConfig("eps_norm must be positive".into()));
        }
        let lambdas = [
            self.lambda0,
            self.lambda_patient,
            self.lambda_volume,
            self.lambda_slice,
        ];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidLossConfig("weights must be finite and >= 0".into()));
        }
        if lambdas.iter().all(|&l| l == 0.0) {
            return Err(Error::InvalidLossConfig("at least one weight must be positive".into()));
        }
        Ok(())
    }
}

/// Cosine similarity with norms clamped below at `eps`.
pub fn cosine_sim(a: ArrayView1<f64>, b: ArrayView1<f64>, eps: f64) -> f64 {
    let na = a.dot(&a).sqrt().max(eps);
    let nb = b.dot(&b).sqrt().max(eps);
    a.dot(&b) / (na * nb)
}

/// Pairwise similarities plus what the backward pass needs.
struct SimCache {
    sim: Array2<f64>,
    unit: Array2<f64>,
    norm: Vec<f64>,
    clamped: Vec<bool>,
}

impl SimCache {
    fn new(z: &Array2<f64>, eps: f64) -> Self {
        let rows = z.nrows();
        let mut unit = z.clone();
        let mut norm = Vec::with_capacity(rows);
        let mut clamped = Vec::with_capacity(rows);
        for mut r in unit.rows_mut() {
            let raw = r.dot(&r).sqrt();
            let n = raw.max(eps);
            r /= n;
            norm.push(n);
            clamped.push(raw <= eps);
        }
        let sim = unit.dot(&unit.t());
        Self {
            sim,
            unit,
            norm,
            clamped,
        }
    }

    /// Chain `dL/dS` (ordered pairs, diagonal ignored) back to the embeddings.
    fn backward(&self, dsim: &Array2<f64>) -> Array2<f64> {
        let rows = self.sim.nrows();
        let mut grad = Array2::zeros(self.unit.raw_dim());
        for i in 0..rows {
            let mut g = grad.row_mut(i);
            for k in 0..rows {
                if k == i {
                    continue;
                }
                let w = dsim[[i, k]] + dsim[[k, i]];
                if w == 0.0 {
                    continue;
                }
                let uk = self.unit.row(k);
                if self.clamped[i] {
                    g.scaled_add(w / self.norm[i], &uk);
                } else {
                    let s = self.sim[[i, k]];
                    let ui = self.unit.row(i);
                    g.zip_mut_with(&uk, |gv, &ukv| *gv += w * ukv / self.norm[i]);
                    g.scaled_add(-w * s / self.norm[i], &ui);
                }
            }
        }
        grad
    }
}

/// Adds one anchor's `-scale * sum_{j in pos} log softmax_{denom}(j)` to the
/// loss and its derivative to `dsim`.
fn anchor_term(
    sim: &Array2<f64>,
    tau: f64,
    anchor: usize,
    positives: &[usize],
    denom: &[usize],
    scale: f64,
    dsim: Option<&mut Array2<f64>>,
) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    let logits: Vec<f64> = denom.iter().map(|&k| sim[[anchor, k]] / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let value: f64 = positives
        .iter()
        .map(|&j| sim[[anchor, j]] / tau - lse)
        .sum();
    if let Some(d) = dsim {
        for &j in positives {
            d[[anchor, j]] -= scale / tau;
        }
        let mass = scale * positives.len() as f64 / tau;
        for (&k, l) in denom.iter().zip(&logits) {
            d[[anchor, k]] += mass * (l - lse).exp();
        }
    }
    -scale * value
}

fn ntxent_impl(batch: &LossBatch, tau: f64, eps: f64, want_grad: bool) -> Result<(f64, Option<Array2<f64>>)> {
    let n = batch.n();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let cache = SimCache::new(&batch.z, eps);
    let rows = 2 * n;
    let scale = 1.0 / rows as f64;
    let mut dsim = want_grad.then(|| Array2::zeros((rows, rows)));
    let mut loss = 0.0;
    for i in 0..rows {
        let pair = (i + n) % rows;
        let denom: Vec<usize> = (0..rows).filter(|&k| k != i).collect();
        loss += anchor_term(&cache.sim, tau, i, &[pair], &denom, scale, dsim.as_mut());
    }
    Ok((loss, dsim.map(|d| cache.backward(&d))))
}

/// Average number of standard views per group, the `G` normalizer.
///
/// For partition groups this is `N / #groups`; for the adjacency relation it
/// is the mean, over anchors, of one plus the number of other standard views
/// adjacent to the anchor.
pub fn mean_group_size(batch: &LossBatch, group: GroupType) -> f64 {
    let n = batch.n();
    let metas = batch.metas();
    match group {
        GroupType::Slice => {
            let total: usize = (0..n)
                .map(|i| {
                    1 + (0..n)
                        .filter(|&j| j != i && metas[i].same_group(&metas[j], group))
                        .count()
                })
                .sum();
            total as f64 / n as f64
        }
        GroupType::Volume | GroupType::Patient => {
            let mut keys: Vec<u32> = metas
                .iter()
                .map(|m| if group == GroupType::Volume { m.volume } else { m.patient })
                .collect();
            keys.sort_unstable();
            keys.dedup();
            n as f64 / keys.len() as f64
        }
    }
}

fn group_impl(
    batch: &LossBatch,
    group: GroupType,
    tau: f64,
    eps: f64,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    if !batch.labeled.contains(group) {
        return Err(Error::GroupNotLabeled(group.name()));
    }
    let n = batch.n();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let cache = SimCache::new(&batch.z, eps);
    let rows = 2 * n;
    let scale = 1.0 / (n as f64 * mean_group_size(batch, group));
    let mut dsim = want_grad.then(|| Array2::zeros((rows, rows)));
    let mut loss = 0.0;
    for i in 0..n {
        let mi = batch.row_meta(i);
        let mut positives = Vec::new();
        let mut denom = Vec::new();
        for k in (0..rows).filter(|&k| k != i) {
            let mk = batch.row_meta(k);
            let same = mi.same_group(mk, group);
            if same {
                positives.push(k);
            }
            if same || mk.patient != mi.patient {
                denom.push(k);
            }
        }
        loss += anchor_term(&cache.sim, tau, i, &positives, &denom, scale, dsim.as_mut());
    }
    Ok((loss, dsim.map(|d| cache.backward(&d))))
}

/// Standard NT-Xent over all `2N` rows, averaged over rows.
pub fn ntxent_loss(batch: &LossBatch, tau: f64) -> Result<f64> {
    Ok(ntxent_impl(batch, tau, DEFAULT_EPS_NORM, false)?.0)
}

/// Group contrastive loss for one group type.
pub fn group_loss(batch: &LossBatch, group: GroupType, tau: f64) -> Result<f64> {
    Ok(group_impl(batch, group, tau, DEFAULT_EPS_NORM, false)?.0)
}

/// Per-term values of the combined loss (unweighted) and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub ntxent: f64,
    pub patient: f64,
    pub volume: f64,
    pub slice: f64,
    pub total: f64,
}

fn combined_impl(
    batch: &LossBatch,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Array2<f64>>)> {
    cfg.validate()?;
    let mut out = LossBreakdown::default();
    let mut grad = want_grad.then(|| Array2::zeros(batch.z.raw_dim()));
    if cfg.lambda0 > 0.0 {
        let (v, g) = ntxent_impl(batch, cfg.tau, cfg.eps_norm, want_grad)?;
        out.ntxent = v;
        out.total += cfg.lambda0 * v;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.scaled_add(cfg.lambda0, &g);
        }
    }
    for group in [GroupType::Patient, GroupType::Volume, GroupType::Slice] {
        let lambda = cfg.lambda(group);
        if lambda == 0.0 {
            continue;
        }
        let (v, g) = group_impl(batch, group, cfg.tau, cfg.eps_norm, want_grad)?;
        match group {
            GroupType::Patient => out.patient = v,
            GroupType::Volume => out.volume = v,
            GroupType::Slice => out.slice = v,
        }
        out.total += lambda * v;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.scaled_add(lambda, &g);
        }
    }
    Ok((out, grad))
}

/// `lambda0 * NT-Xent + lambda_p * patient + lambda_v * volume + lambda_s * slice`.
/// Terms with zero weight are skipped entirely.
pub fn combined_loss(batch: &LossBatch, cfg: &LossConfig) -> Result<f64> {
    Ok(combined_impl(batch, cfg, false)?.0.total)
}

pub fn combined_breakdown(batch: &LossBatch, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(combined_impl(batch, cfg, false)?.0)
}

/// Combined loss and its gradient with respect to every embedding entry.
pub fn loss_grad(batch: &LossBatch, cfg: &LossConfig) -> Result<(LossBreakdown, Array2<f64>)> {
    let (b, g) = combined_impl(batch, cfg, true)?;
    Ok((b, g.expect("gradient requested")))
}
