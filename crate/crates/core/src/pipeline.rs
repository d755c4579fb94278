//! Active-learning rounds: cumulative budgets, strategy dispatch, a 1-NN
//! label-efficiency probe and repeated-seed reporting.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coreset::{cover_radius, SelectionState};
use crate::dataset::DatasetIndex;
use crate::encoder::{embed_all, train, TrainConfig};
use crate::error::{Error, Result};
use crate::group::{GroupSet, GroupType};
use crate::loss::LossConfig;
use crate::seed;

/// Cumulative labeling schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for RoundPlan {
    fn default() -> Self {
        Self {
            fractions: vec![0.02, 0.03, 0.04, 0.05, 0.10, 0.15, 0.20, 0.40],
            repeats: 5,
            seed: 0,
        }
    }
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("round plan needs at least one fraction".into()));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if self.fractions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("fractions must be strictly increasing".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// Round-half-up of `fraction * n`, at least 1 and never below the previous round.
pub fn budgets(plan: &RoundPlan, n: usize) -> Vec<usize> {
    let mut prev = 1;
    plan.fractions
        .iter()
        .map(|f| {
            let b = ((f * n as f64) + 0.5).floor() as usize;
            prev = b.max(prev);
            prev
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    /// K-Center Greedy on raw pixels.
    CoresetRaw,
    /// K-Center Greedy on learned representations.
    CoresetLearned,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::CoresetRaw => "coreset_raw",
            StrategyKind::CoresetLearned => "coreset_learned",
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(StrategyKind::Random),
            "coreset_raw" => Ok(StrategyKind::CoresetRaw),
            "coreset_learned" => Ok(StrategyKind::CoresetLearned),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
}

impl StrategySpec {
    pub fn random() -> Self {
        Self {
            name: "random".into(),
            kind: StrategyKind::Random,
            loss: None,
        }
    }

    pub fn coreset_raw() -> Self {
        Self {
            name: "coreset_raw".into(),
            kind: StrategyKind::CoresetRaw,
            loss: None,
        }
    }

    pub fn coreset_learned(loss: LossConfig) -> Self {
        Self {
            name: "coreset_learned".into(),
            kind: StrategyKind::CoresetLearned,
            loss: Some(loss),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.loss) {
            (StrategyKind::CoresetLearned, None) => Err(Error::Config(format!(
                "strategy `{}` needs a loss config",
                self.name
            ))),
            (StrategyKind::CoresetLearned, Some(l)) => l.validate(),
            _ => Ok(()),
        }
    }
}

/// Fraction of unlabeled rows whose nearest labeled row (in `features`)
/// carries the same label. Vacuously 1 when everything is labeled.
pub fn probe_accuracy(features: &Array2<f64>, labeled: &[usize], labels: &[u32]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeled);
    }
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: labels.len(),
        });
    }
    let mut is_labeled = vec![false; n];
    for &l in labeled {
        if l >= n {
            return Err(Error::IndexOutOfRange { index: l, len: n });
        }
        is_labeled[l] = true;
    }
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !is_labeled[i]).collect();
    if unlabeled.is_empty() {
        return Ok(1.0);
    }
    let correct: usize = unlabeled
        .par_iter()
        .map(|&i| {
            let row = features.row(i);
            let mut best = (f64::INFINITY, usize::MAX);
            for &j in labeled {
                let d: f64 = row
                    .iter()
                    .zip(features.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 || (d == best.0 && j < best.1) {
                    best = (d, j);
                }
            }
            usize::from(labels[best.1] == labels[i])
        })
        .sum();
    Ok(correct as f64 / unlabeled.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub strategy: String,
    pub repeat: usize,
    pub round: usize,
    pub fraction: f64,
    pub budget: usize,
    /// Slice ids in selection order; each round extends the previous one.
    pub selected: Vec<u32>,
    pub probe_accuracy: f64,
    /// Cover radius in the strategy's own selection space.
    pub cover_radius: Option<f64>,
    /// Cover radius measured in the repeat's learned representation space.
    pub cover_radius_learned: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub round_fraction: f64,
    pub mean_accuracy: f64,
    pub mean_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub n: usize,
    pub budgets: Vec<usize>,
    pub plan: RoundPlan,
    pub records: Vec<RoundRecord>,
    pub summary: Vec<SummaryRow>,
}

impl RoundReport {
    pub fn records_for<'a>(
        &'a self,
        strategy: &'a str,
    ) -> impl Iterator<Item = &'a RoundRecord> + 'a {
        self.records.iter().filter(move |r| r.strategy == strategy)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("strategy,round_fraction,mean_accuracy,mean_delta\n");
        for row in &self.summary {
            let delta = row.mean_delta.map(|d| d.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{}\n",
                row.strategy, row.round_fraction, row.mean_accuracy, delta
            ));
        }
        s
    }
}

/// Wall-clock cost per (strategy, repeat). Kept apart from the report so the
/// report stays a pure function of its inputs.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub strategy: String,
    pub repeat: usize,
    pub seconds: f64,
}

pub fn repeat_seed(master: u64, repeat: usize) -> u64 {
    seed::derive(seed::derive(master, seed::tag::REPEAT), repeat as u64)
}

fn run_repeat(
    ds: &DatasetIndex,
    labels: &[u32],
    pixels: &Array2<f64>,
    strategies: &[StrategySpec],
    plan: &RoundPlan,
    train_cfg: &TrainConfig,
    budgets: &[usize],
    repeat: usize,
) -> Result<(Vec<RoundRecord>, Vec<Timing>)> {
    let rseed = repeat_seed(plan.seed, repeat);
    let n = ds.len();
    let encoder_cfg = TrainConfig {
        seed: seed::derive(rseed, seed::tag::ENCODER),
        ..train_cfg.clone()
    };

    let mut learned: Vec<Option<Array2<f64>>> = Vec::with_capacity(strategies.len());
    let mut timings = Vec::new();
    for s in strategies {
        let start = Instant::now();
        let emb = match (s.kind, &s.loss) {
            (StrategyKind::CoresetLearned, Some(loss)) => {
                let out = train(ds, loss.groups(), loss, &encoder_cfg)?;
                Some(embed_all(&out.params, ds)?)
            }
            _ => None,
        };
        learned.push(emb);
        timings.push(Timing {
            strategy: s.name.clone(),
            repeat,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let reference = learned.iter().flatten().next().cloned();

    let mut records = Vec::new();
    for (si, s) in strategies.iter().enumerate() {
        let start = Instant::now();
        let space: Option<&Array2<f64>> = match s.kind {
            StrategyKind::Random => None,
            StrategyKind::CoresetRaw => Some(pixels),
            StrategyKind::CoresetLearned => learned[si].as_ref(),
        };
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = match space {
            Some(emb) => Some(SelectionState::new(emb, &[])?),
            None => {
                order.shuffle(&mut seed::rng(seed::derive(rseed, seed::tag::RANDOM_STRATEGY)));
                None
            }
        };
        let cold = seed::derive(rseed, seed::tag::COLD_START);
        for (round, (&budget, &fraction)) in budgets.iter().zip(&plan.fractions).enumerate() {
            let selected: Vec<usize> = match (&mut state, space) {
                (Some(st), Some(emb)) => {
                    let have = st.labeled().len();
                    st.extend(emb, budget - have, cold)?;
                    st.labeled().to_vec()
                }
                _ => order[..budget].to_vec(),
            };
            let probe_accuracy = probe_accuracy(pixels, &selected, labels)?;
            let cover = state.as_ref().map(SelectionState::radius);
            let cover_learned = reference
                .as_ref()
                .map(|e| cover_radius(e, &selected))
                .transpose()?;
            records.push(RoundRecord {
                strategy: s.name.clone(),
                repeat,
                round,
                fraction,
                budget,
                selected: selected.iter().map(|&r| ds.slice(r).slice_id).collect(),
                probe_accuracy,
                cover_radius: cover,
                cover_radius_learned: cover_learned,
            });
        }
        timings[si].seconds += start.elapsed().as_secs_f64();
    }
    Ok((records, timings))
}

/// Run every strategy for every repeat. Repeats run in parallel; the
/// report does not depend on the worker count.
pub fn run_experiment(
    ds: &DatasetIndex,
    labels: &[u32],
    strategies: &[StrategySpec],
    plan: &RoundPlan,
    train_cfg: &TrainConfig,
) -> Result<(RoundReport, Vec<Timing>)> {
    plan.validate()?;
    for s in strategies {
        s.validate()?;
    }
    let names: BTreeSet<&str> = strategies.iter().map(|s| s.name.as_str()).collect();
    if names.len() != strategies.len() {
        return Err(Error::Config("strategy names must be unique".into()));
    }
    if labels.len() != ds.len() {
        return Err(Error::Shape {
            expected: ds.len(),
            got: labels.len(),
        });
    }
    let n = ds.len();
    let budgets = budgets(plan, n);
    if let Some(&b) = budgets.iter().find(|&&b| b > n) {
        return Err(Error::BudgetTooLarge {
            budget: b,
            available: n,
        });
    }
    let pixels = ds.pixel_matrix();
    let per_repeat = (0..plan.repeats)
        .into_par_iter()
        .map(|r| run_repeat(ds, labels, &pixels, strategies, plan, train_cfg, &budgets, r))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut timings = Vec::new();
    for (rec, t) in per_repeat {
        records.extend(rec);
        timings.extend(t);
    }
    records.sort_by(|a, b| {
        let sa = strategies.iter().position(|s| s.name == a.strategy);
        let sb = strategies.iter().position(|s| s.name == b.strategy);
        (sa, a.repeat, a.round).cmp(&(sb, b.repeat, b.round))
    });

    let mut summary = Vec::new();
    for s in strategies {
        for (round, &fraction) in plan.fractions.iter().enumerate() {
            let rows: Vec<&RoundRecord> = records
                .iter()
                .filter(|r| r.strategy == s.name && r.round == round)
                .collect();
            let mean_accuracy =
                rows.iter().map(|r| r.probe_accuracy).sum::<f64>() / rows.len() as f64;
            let deltas: Vec<f64> = rows.iter().filter_map(|r| r.cover_radius).collect();
            let mean_delta =
                (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
            summary.push(SummaryRow {
                strategy: s.name.clone(),
                round_fraction: fraction,
                mean_accuracy,
                mean_delta,
            });
        }
    }
    Ok((
        RoundReport {
            n,
            budgets,
            plan: plan.clone(),
            records,
            summary,
        },
        timings,
    ))
}

/// Loss terms an ablation sweep draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossTerms {
    pub ntxent: bool,
    pub groups: GroupSet,
}

impl FromStr for LossTerms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = LossTerms::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "ntxent" {
                out.ntxent = true;
            } else {
                out.groups.insert(part.parse()?);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for LossTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = Vec::new();
        if self.ntxent {
            parts.push("ntxent");
        }
        parts.extend(
            [GroupType::Patient, GroupType::Volume, GroupType::Slice]
                .into_iter()
                .filter(|g| self.groups.contains(*g))
                .map(GroupType::name),
        );
        f.write_str(&parts.join("+"))
    }
}

/// Loss weights for a term combination: the tuned values where a tuned
/// combination exists, weight 1 for a lone term or a lone group next to
/// NT-Xent, and an even split across groups otherwise.
pub fn ablation_weights(terms: LossTerms) -> LossConfig {
    let (p, v, s) = (
        terms.groups.patient,
        terms.groups.volume,
        terms.groups.slice,
    );
    let l0 = if terms.ntxent { 1.0 } else { 0.0 };
    let tuned = match (terms.ntxent, p, v, s) {
        (true, true, true, false) => Some((0.05, 0.35, 0.0)),
        (true, true, true, true) => Some((0.05, 0.35, 0.025)),
        (true, false, true, true) => Some((0.0, 0.10, 0.30)),
        (false, true, true, true) => Some((0.33, 0.33, 0.33)),
        _ => None,
    };
    let (wp, wv, ws) = tuned.unwrap_or_else(|| {
        let k = terms.groups.len();
        let w = if k <= 1 { 1.0 } else { 1.0 / k as f64 };
        let on = |b: bool| if b { w } else { 0.0 };
        (on(p), on(v), on(s))
    });
    LossConfig::weighted(l0, wp, wv, ws)
}

/// Every non-empty subset of `terms`, ordered by size then canonical order.
pub fn ablation_combinations(terms: LossTerms) -> Vec<LossTerms> {
    let mut atoms: Vec<LossTerms> = Vec::new();
    if terms.ntxent {
        atoms.push(LossTerms {
            ntxent: true,
            groups: GroupSet::NONE,
        });
    }
    for g in [GroupType::Patient, GroupType::Volume, GroupType::Slice] {
        if terms.groups.contains(g) {
            atoms.push(LossTerms {
                ntxent: false,
                groups: [g].into_iter().collect(),
            });
        }
    }
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << atoms.len()))
        .map(|mask| (0..atoms.len()).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| (a.len(), a).cmp(&(b.len(), b)));
    subsets
        .into_iter()
        .map(|idx| {
            let mut c = LossTerms::default();
            for i in idx {
                c.ntxent |= atoms[i].ntxent;
                for g in atoms[i].groups.iter() {
                    c.groups.insert(g);
                }
            }
            c
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub combination: String,
    pub lambdas: [f64; 4],
    /// Mean probe accuracy over rounds with fraction <= `low_budget_max`.
    pub low_budget_accuracy: f64,
    pub mean_delta: f64,
}

/// Sweep loss combinations against plain coreset on raw pixels.
pub fn ablate(
    ds: &DatasetIndex,
    labels: &[u32],
    terms: LossTerms,
    plan: &RoundPlan,
    train_cfg: &TrainConfig,
    low_budget_max: f64,
) -> Result<Vec<AblationRow>> {
    let mut strategies = vec![StrategySpec {
        name: "coreset".into(),
        ..StrategySpec::coreset_raw()
    }];
    for c in ablation_combinations(terms) {
        strategies.push(StrategySpec {
            name: c.to_string(),
            kind: StrategyKind::CoresetLearned,
            loss: Some(ablation_weights(c)),
        });
    }
    let (report, _) = run_experiment(ds, labels, &strategies, plan, train_cfg)?;
    let rows = strategies
        .iter()
        .map(|s| {
            let recs: Vec<&RoundRecord> = report
                .records_for(&s.name)
                .filter(|r| r.fraction <= low_budget_max + 1e-12)
                .collect();
            let acc = recs.iter().map(|r| r.probe_accuracy).sum::<f64>() / recs.len().max(1) as f64;
            let deltas: Vec<f64> = recs.iter().filter_map(|r| r.cover_radius).collect();
            let l = s.loss.unwrap_or(LossConfig::weighted(0.0, 0.0, 0.0, 0.0));
            AblationRow {
                combination: s.name.clone(),
                lambdas: [l.lambda0, l.lambda_patient, l.lambda_volume, l.lambda_slice],
                low_budget_accuracy: acc,
                mean_delta: deltas.iter().sum::<f64>() / deltas.len().max(1) as f64,
            }
        })
        .collect();
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "combination,lambda0,lambda_patient,lambda_volume,lambda_slice,low_budget_accuracy,mean_delta\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.combination,
            r.lambdas[0],
            r.lambdas[1],
            r.lambdas[2],
            r.lambdas[3],
            r.low_budget_accuracy,
            r.mean_delta
        ));
    }
    s
}
