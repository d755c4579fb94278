use gcl_core::loss::{
    combined_breakdown, combined_loss, group_loss, loss_grad, ntxent_loss, LossBatch, LossConfig,
    RowMeta,
};
use gcl_core::oracle::{self, RefMeta};
use gcl_core::verify::{embedding_grad_error, rows_of};
use gcl_core::{GroupSet, GroupType};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

/// Unscaled group-loss double sum, optionally without the same-patient
/// exclusion in the denominator.
fn raw_group(z: &[Vec<f64>], meta: &[RowMeta], g: GroupType, tau: f64, exclude: bool) -> f64 {
    let n = meta.len();
    let m = |r: usize| &meta[r % n];
    let mut total = 0.0;
    for i in 0..n {
        let denom: f64 = (0..2 * n)
            .filter(|&k| k != i)
            .filter(|&k| !exclude || m(i).same_group(m(k), g) || m(i).patient != m(k).patient)
            .map(|k| (cosine(&z[i], &z[k]) / tau).exp())
            .sum();
        for j in (0..2 * n).filter(|&j| j != i && m(i).same_group(m(j), g)) {
            total -= ((cosine(&z[i], &z[j]) / tau).exp() / denom).ln();
        }
    }
    total
}

fn arb_batch() -> impl Strategy<Value = (Array2<f64>, Vec<RowMeta>)> {
    (2usize..=6, 3usize..=8).prop_flat_map(|(n, e)| {
        (
            prop::collection::vec(-1.0f64..1.0, 2 * n * e),
            prop::collection::vec((0u32..3, 0u32..2, 0u32..4), n),
        )
            .prop_map(move |(flat, m)| {
                let z = Array2::from_shape_vec((2 * n, e), flat).unwrap();
                let meta = m
                    .into_iter()
                    .map(|(p, v, s)| RowMeta {
                        patient: p,
                        volume: 2 * p + v,
                        slice_index: s,
                    })
                    .collect();
                (z, meta)
            })
    })
}

fn refs(meta: &[RowMeta]) -> Vec<RefMeta> {
    meta.iter()
        .map(|m| RefMeta {
            patient: m.patient,
            volume: m.volume,
            slice_index: m.slice_index,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_term_matches_the_double_loop((z, meta) in arb_batch(), tau in 0.05f64..2.0) {
        let b = LossBatch::new(z.clone(), meta.clone(), GroupSet::ALL).unwrap();
        let zr = rows_of(&z);
        let r = refs(&meta);
        prop_assert!((ntxent_loss(&b, tau).unwrap() - oracle::ntxent(&zr, tau, 1e-12)).abs() < 1e-10);
        for g in GroupType::ALL {
            let got = group_loss(&b, g, tau).unwrap();
            prop_assert!((got - oracle::group(&zr, &r, g, tau, 1e-12)).abs() < 1e-10);
            prop_assert!(got >= 0.0);
        }
    }

    #[test]
    fn exclusion_never_increases_the_loss((z, meta) in arb_batch(), tau in 0.1f64..2.0) {
        let zr = rows_of(&z);
        for g in GroupType::ALL {
            let with = raw_group(&zr, &meta, g, tau, true);
            let without = raw_group(&zr, &meta, g, tau, false);
            prop_assert!(with <= without + 1e-12);
        }
    }

    #[test]
    fn permuting_rows_jointly_leaves_losses_unchanged((z, meta) in arb_batch(), shift in 1usize..6) {
        let n = meta.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let mut zp = z.clone();
        for (dst, &src) in perm.iter().enumerate() {
            zp.row_mut(dst).assign(&z.row(src));
            zp.row_mut(dst + n).assign(&z.row(src + n));
        }
        let mp: Vec<RowMeta> = perm.iter().map(|&s| meta[s]).collect();
        let cfg = LossConfig::weighted(1.0, 0.3, 0.5, 0.2);
        let a = combined_loss(&LossBatch::new(z, meta, GroupSet::ALL).unwrap(), &cfg).unwrap();
        let b = combined_loss(&LossBatch::new(zp, mp, GroupSet::ALL).unwrap(), &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn combined_is_the_weighted_sum_of_terms((z, meta) in arb_batch(), alpha in 0.1f64..5.0) {
        let b = LossBatch::new(z, meta, GroupSet::ALL).unwrap();
        let cfg = LossConfig::default();
        let parts = cfg.lambda0 * ntxent_loss(&b, cfg.tau).unwrap()
            + cfg.lambda_patient * group_loss(&b, GroupType::Patient, cfg.tau).unwrap()
            + cfg.lambda_volume * group_loss(&b, GroupType::Volume, cfg.tau).unwrap();
        let total = combined_loss(&b, &cfg).unwrap();
        prop_assert!((total - parts).abs() < 1e-12 * parts.abs().max(1.0));

        let scaled = LossConfig {
            lambda_patient: alpha * cfg.lambda_patient,
            lambda_volume: alpha * cfg.lambda_volume,
            ..cfg
        };
        let br = combined_breakdown(&b, &cfg).unwrap();
        let bs = combined_breakdown(&b, &scaled).unwrap();
        let groups = |x: &gcl_core::loss::LossBreakdown| x.total - cfg.lambda0 * x.ntxent;
        prop_assert!((groups(&bs) - alpha * groups(&br)).abs() < 1e-9 * groups(&br).abs().max(1.0));
    }
}

#[test]
fn embedding_gradient_matches_central_differences() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (z, meta) = arb_batch().new_tree(&mut runner).unwrap().current();
        // the check must hold at tau and at 2 tau
        for tau in [0.5, 1.0] {
            let b = LossBatch::new(z.clone(), meta.clone(), GroupSet::ALL).unwrap();
            let cfg = LossConfig {
                tau,
                ..LossConfig::weighted(1.0, 0.3, 0.5, 0.2)
            };
            worst = worst.max(embedding_grad_error(&b, &cfg, 1e-5));
        }
    }
    assert!(worst < 1e-6, "max rel err {worst:e}");
}

#[test]
fn identical_single_pair_has_zero_gradient() {
    let z = Array2::from_shape_vec((2, 3), vec![0.3, -0.2, 0.9, 0.3, -0.2, 0.9]).unwrap();
    let meta = vec![RowMeta {
        patient: 0,
        volume: 0,
        slice_index: 0,
    }];
    let b = LossBatch::new(z, meta, GroupSet::ALL).unwrap();
    let (l, g) = loss_grad(&b, &LossConfig::ntxent_only()).unwrap();
    assert_eq!(l.total, 0.0);
    assert!(g.iter().all(|v| *v == 0.0));
}
