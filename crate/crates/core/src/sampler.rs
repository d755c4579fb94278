//! Group-aware batch sampler.
//!
//! Every slice becomes the anchor of one tuple per epoch. A tuple carries one
//! randomly drawn companion per enabled group (adjacent slice, same volume,
//! same patient). Batches are then composed from tuples of distinct patients
//! until fewer patients remain than tuples per batch.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;

use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::group::{GroupSet, GroupType};
use crate::seed;

/// Anchor row plus one companion row per enabled group, in [`GroupType::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorTuple {
    pub patient_id: u32,
    pub anchor: usize,
    pub companions: Vec<(GroupType, usize)>,
}

impl AnchorTuple {
    /// Anchor first, then companions.
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.anchor).chain(self.companions.iter().map(|c| c.1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub batches: Vec<Vec<AnchorTuple>>,
    /// Slices per batch.
    pub batch_size: usize,
    /// Tuples built but left over when no further batch could be filled.
    pub dropped: Vec<AnchorTuple>,
}

impl EpochPlan {
    /// Flattened rows of one batch, tuple by tuple.
    pub fn batch_rows(&self, b: usize) -> Vec<usize> {
        self.batches[b].iter().flat_map(AnchorTuple::rows).collect()
    }

    /// Debug view keyed by slice ids.
    pub fn to_json(&self, ds: &DatasetIndex) -> serde_json::Value {
        #[derive(Serialize)]
        struct TupleView {
            patient_id: u32,
            anchor: u32,
            companions: Vec<(GroupType, u32)>,
        }
        let view = |t: &AnchorTuple| TupleView {
            patient_id: t.patient_id,
            anchor: ds.slice(t.anchor).slice_id,
            companions: t
                .companions
                .iter()
                .map(|&(g, r)| (g, ds.slice(r).slice_id))
                .collect(),
        };
        let batches: Vec<Vec<TupleView>> = self
            .batches
            .iter()
            .map(|b| b.iter().map(view).collect())
            .collect();
        let dropped: Vec<TupleView> = self.dropped.iter().map(view).collect();
        serde_json::json!({
            "batch_size": self.batch_size,
            "batches": batches,
            "dropped": dropped,
        })
    }
}

pub fn tuple_width(groups: GroupSet) -> usize {
    1 + groups.len()
}

/// Slices per batch used when none is configured: 9 for width 3, else 8.
pub fn default_batch_size(groups: GroupSet) -> usize {
    if tuple_width(groups) == 3 {
        9
    } else {
        8
    }
}

fn draw<R: Rng>(rng: &mut R, pool: &[usize]) -> usize {
    *pool.choose(rng).expect("pool checked non-empty")
}

fn build_tuples<R: Rng>(
    ds: &DatasetIndex,
    groups: GroupSet,
    rng: &mut R,
) -> Result<Vec<(u32, Vec<AnchorTuple>)>> {
    let mut per_patient = Vec::with_capacity(ds.patients().len());
    for (&patient, volumes) in ds.patients() {
        let mut tuples = Vec::new();
        for &volume in volumes {
            let rows = ds.volume_rows(volume);
            for (k, &anchor) in rows.iter().enumerate() {
                let mut companions = Vec::with_capacity(groups.len());
                for g in groups.iter() {
                    let pick = match g {
                        GroupType::Slice => {
                            let neighbours: Vec<usize> = [k.checked_sub(1), Some(k + 1)]
                                .into_iter()
                                .flatten()
                                .filter_map(|i| rows.get(i).copied())
                                .collect();
                            if neighbours.is_empty() {
                                anchor
                            } else {
                                draw(rng, &neighbours)
                            }
                        }
                        GroupType::Volume => {
                            let pool: Vec<usize> =
                                rows.iter().copied().filter(|&r| r != anchor).collect();
                            if pool.is_empty() {
                                return Err(Error::Sampler(format!(
                                    "volume {volume} has a single slice; volume companion impossible"
                                )));
                            }
                            draw(rng, &pool)
                        }
                        GroupType::Patient => {
                            let other: Vec<usize> = volumes
                                .iter()
                                .filter(|&&v| v != volume)
                                .flat_map(|&v| ds.volume_rows(v).iter().copied())
                                .collect();
                            let pool = if other.is_empty() {
                                rows.iter().copied().filter(|&r| r != anchor).collect()
                            } else {
                                other
                            };
                            if pool.is_empty() {
                                return Err(Error::Sampler(format!(
                                    "patient {patient} has a single slice; patient companion impossible"
                                )));
                            }
                            draw(rng, &pool)
                        }
                    };
                    companions.push((g, pick));
                }
                tuples.push(AnchorTuple {
                    patient_id: patient,
                    anchor,
                    companions,
                });
            }
        }
        per_patient.push((patient, tuples));
    }
    Ok(per_patient)
}

/// Plan one epoch. `batch_size` counts slices and must be a multiple of the
/// tuple width.
pub fn build_epoch(
    ds: &DatasetIndex,
    groups: GroupSet,
    batch_size: usize,
    seed: u64,
) -> Result<EpochPlan> {
    let width = tuple_width(groups);
    if batch_size == 0 || batch_size % width != 0 {
        return Err(Error::Sampler(format!(
            "batch size {batch_size} is not a positive multiple of tuple width {width}"
        )));
    }
    let per_batch = batch_size / width;
    let mut rng = seed::rng(seed);
    let mut pools = build_tuples(ds, groups, &mut rng)?;
    pools.retain(|(_, t)| !t.is_empty());

    let mut batches = Vec::new();
    // Each non-empty pool holds at least one tuple, so `pools.len() >= per_batch`
    // also guarantees enough remaining slices for a full batch.
    while pools.len() >= per_batch {
        let mut batch = Vec::with_capacity(per_batch);
        let mut used: Vec<u32> = Vec::with_capacity(per_batch);
        while batch.len() < per_batch {
            let available: Vec<usize> = (0..pools.len())
                .filter(|&i| !used.contains(&pools[i].0))
                .collect();
            let p = draw(&mut rng, &available);
            let t = rng.random_range(0..pools[p].1.len());
            let tuple = pools[p].1.remove(t);
            if pools[p].1.is_empty() {
                pools.remove(p);
            } else {
                used.push(pools[p].0);
            }
            batch.push(tuple);
        }
        batches.push(batch);
    }
    let dropped = pools.into_iter().flat_map(|(_, t)| t).collect();
    Ok(EpochPlan {
        batches,
        batch_size,
        dropped,
    })
}
