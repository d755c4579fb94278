//! Self-check suites run by `gcl verify`: each compares a production path
//! with its brute-force or numerical oracle on randomized instances.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::coreset::{brute_force_k_center, k_center_greedy};
use crate::dataset::{generate_synthetic, group_deviation, DatasetIndex, Grouping, SynthSpec};
use crate::encoder::{batch_loss_grad, Architecture, EncoderParams};
use crate::group::{GroupSet, GroupType};
use crate::loss::{combined_loss, loss_grad, LossBatch, LossConfig, RowMeta};
use crate::oracle::{self, RefMeta};
use crate::sampler::{build_epoch, tuple_width, EpochPlan};
use crate::seed;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Worst observed error or a description of the first failure.
    pub detail: String,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// A random loss batch: `n` standard views spread over 2-3 patients with
/// 1-3 volumes each, embeddings in `dim` dimensions.
pub fn random_loss_case(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (LossBatch, Vec<RefMeta>) {
    let patients = rng.random_range(2..=3u32);
    let volumes_per = rng.random_range(1..=3u32);
    let meta: Vec<RowMeta> = (0..n)
        .map(|_| {
            let p = rng.random_range(0..patients);
            RowMeta {
                patient: p,
                volume: p * volumes_per + rng.random_range(0..volumes_per),
                slice_index: rng.random_range(0..4),
            }
        })
        .collect();
    let z = Array2::from_shape_fn((2 * n, dim), |_| rng.random_range(-1.0..1.0));
    let refs = meta
        .iter()
        .map(|m| RefMeta {
            patient: m.patient,
            volume: m.volume,
            slice_index: m.slice_index,
        })
        .collect();
    (LossBatch::new(z, meta, GroupSet::ALL).expect("shape"), refs)
}

pub fn random_lambdas(rng: &mut ChaCha8Rng) -> LossConfig {
    let mut l = [0.0; 4];
    while l.iter().all(|&x| x == 0.0) {
        for x in &mut l {
            *x = if rng.random_bool(0.6) { rng.random_range(0.01..1.0) } else { 0.0 };
        }
    }
    LossConfig {
        tau: rng.random_range(0.1..1.0),
        ..LossConfig::weighted(l[0], l[1], l[2], l[3])
    }
}

pub fn rows_of(z: &Array2<f64>) -> Vec<Vec<f64>> {
    z.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn loss_suite(cases: usize, seed_value: u64) -> SuiteResult {
    let mut rng = seed::rng(seed_value);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.random_range(2..=6);
        let (batch, refs) = {
            let dim = rng.random_range(3..=8);
            random_loss_case(&mut rng, n, dim)
        };
        let cfg = random_lambdas(&mut rng);
        let got = combined_loss(&batch, &cfg).expect("valid batch");
        let want = oracle::combined(
            &rows_of(batch.embeddings()),
            &refs,
            [cfg.lambda0, cfg.lambda_patient, cfg.lambda_volume, cfg.lambda_slice],
            cfg.tau,
            cfg.eps_norm,
        );
        let err = (got - want).abs();
        worst = worst.max(err);
        if !(err < 1e-10) {
            failures += 1;
        }
    }
    SuiteResult {
        name: "loss-vs-brute-force",
        cases,
        failures,
        detail: format!("max abs err {worst:.3e}"),
    }
}

/// Max relative error of the embedding gradient against central differences.
pub fn embedding_grad_error(batch: &LossBatch, cfg: &LossConfig, step: f64) -> f64 {
    let (_, analytic) = loss_grad(batch, cfg).expect("valid batch");
    let shape = batch.embeddings().raw_dim();
    let flat: Vec<f64> = batch.embeddings().iter().copied().collect();
    let numeric = oracle::finite_diff(&flat, step, |x| {
        let z = Array2::from_shape_vec(shape.clone(), x.to_vec()).expect("shape");
        combined_loss(&batch.with_embeddings(z).expect("shape"), cfg).expect("valid")
    });
    let analytic: Vec<f64> = analytic.iter().copied().collect();
    oracle::max_rel_err(&analytic, &numeric, 1e-6)
}

/// Max relative error of the full parameter gradient against central differences.
pub fn param_grad_error(
    arch: &Architecture,
    params: &EncoderParams,
    views: &Array2<f64>,
    meta: &[RowMeta],
    cfg: &LossConfig,
    step: f64,
) -> f64 {
    let (_, analytic) = batch_loss_grad(params, views, meta, GroupSet::ALL, cfg).expect("valid");
    let numeric = oracle::finite_diff(params.as_slice(), step, |x| {
        let p = EncoderParams::from_flat(arch.clone(), x.to_vec()).expect("shape");
        batch_loss_grad(&p, views, meta, GroupSet::ALL, cfg).expect("valid").0
    });
    oracle::max_rel_err(&analytic, &numeric, 1e-6)
}

pub fn gradient_suite(cases: usize, seed_value: u64) -> SuiteResult {
    let mut rng = seed::rng(seed_value);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.random_range(2..=6);
        let (batch, _) = {
            let dim = rng.random_range(3..=8);
            random_loss_case(&mut rng, n, dim)
        };
        let cfg = random_lambdas(&mut rng);
        let e1 = embedding_grad_error(&batch, &cfg, 1e-5);

        let arch = Architecture {
            input_dim: rng.random_range(3..=6),
            hidden: vec![rng.random_range(3..=6)],
            rep_dim: rng.random_range(2..=5),
            proj_hidden: vec![rng.random_range(2..=4)],
            proj_dim: rng.random_range(2..=4),
        };
        let flat = (0..arch.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let params = EncoderParams::from_flat(arch.clone(), flat).expect("shape");
        let views = Array2::from_shape_fn((2 * n, arch.input_dim), |_| rng.random_range(-1.0..1.0));
        let e2 = param_grad_error(&arch, &params, &views, batch.metas(), &cfg, 1e-5);
        let e = e1.max(e2);
        worst = worst.max(e);
        if !(e < 1e-4) {
            failures += 1;
        }
    }
    SuiteResult {
        name: "gradient-vs-finite-differences",
        cases,
        failures,
        detail: format!("max rel err {worst:.3e}"),
    }
}

pub fn two_approx_suite(cases: usize, seed_value: u64) -> SuiteResult {
    let mut rng = seed::rng(seed_value);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.random_range(4..=12);
        let dim = rng.random_range(1..=3);
        let emb = Array2::from_shape_fn((n, dim), |_| rng.random_range(-10.0..10.0));
        let initial: Vec<usize> = if rng.random_bool(0.5) { vec![rng.random_range(0..n)] } else { vec![] };
        let k = rng.random_range(1..=4.min(n - initial.len()));
        let greedy = k_center_greedy(&emb, &initial, k, rng.random()).expect("budget ok");
        let (opt, _) = brute_force_k_center(&emb, &initial, k).expect("small");
        let ratio = if opt > 0.0 { greedy.radius() / opt } else { 0.0 };
        worst = worst.max(ratio);
        if greedy.radius() > 2.0 * opt + 1e-12 {
            failures += 1;
        }
    }
    SuiteResult {
        name: "k-center-2-approximation",
        cases,
        failures,
        detail: format!("worst greedy/optimal ratio {worst:.3}"),
    }
}

/// Check every structural property of an epoch plan; `Err` names the first violation.
pub fn check_epoch_plan(
    ds: &DatasetIndex,
    groups: GroupSet,
    plan: &EpochPlan,
) -> std::result::Result<(), String> {
    let width = tuple_width(groups);
    let per_batch = plan.batch_size / width;
    let mut anchors: Vec<usize> = Vec::with_capacity(ds.len());
    for (b, batch) in plan.batches.iter().enumerate() {
        if plan.batch_rows(b).len() != plan.batch_size {
            return Err(format!("batch {b} has wrong slice count"));
        }
        let patients: BTreeSet<u32> = batch.iter().map(|t| t.patient_id).collect();
        if patients.len() != batch.len() {
            return Err(format!("batch {b} repeats a patient"));
        }
    }
    for t in plan.batches.iter().flatten().chain(&plan.dropped) {
        anchors.push(t.anchor);
        let a = ds.slice(t.anchor);
        if a.patient_id != t.patient_id {
            return Err("tuple patient does not match anchor".into());
        }
        let kinds: Vec<GroupType> = t.companions.iter().map(|c| c.0).collect();
        if kinds != groups.iter().collect::<Vec<_>>() {
            return Err("companion kinds do not match enabled groups".into());
        }
        for &(g, r) in &t.companions {
            let c = ds.slice(r);
            let d = ds.volume_rows(a.volume_id).len();
            let ok = match g {
                GroupType::Slice => {
                    c.volume_id == a.volume_id
                        && (c.slice_index.abs_diff(a.slice_index) == 1 || (d == 1 && r == t.anchor))
                }
                GroupType::Volume => c.volume_id == a.volume_id && r != t.anchor,
                GroupType::Patient => c.patient_id == a.patient_id && r != t.anchor,
            };
            if !ok {
                return Err(format!("invalid {g} companion for anchor row {}", t.anchor));
            }
        }
    }
    anchors.sort_unstable();
    if anchors != (0..ds.len()).collect::<Vec<_>>() {
        return Err("anchors do not cover every slice exactly once".into());
    }
    let leftover: BTreeSet<u32> = plan.dropped.iter().map(|t| t.patient_id).collect();
    if leftover.len() >= per_batch {
        return Err("epoch stopped while a full batch could still be formed".into());
    }
    Ok(())
}

pub fn random_sampler_dataset(rng: &mut ChaCha8Rng) -> DatasetIndex {
    let spec = SynthSpec {
        n_patients: rng.random_range(1..=6),
        volumes_per_patient: rng.random_range(1..=3),
        slices_per_volume: rng.random_range(2..=6),
        h: 1,
        w: 2,
        seed: rng.random(),
        ..SynthSpec::default()
    };
    generate_synthetic(&spec).expect("valid spec").0
}

pub fn sampler_suite(datasets: usize, seed_value: u64) -> SuiteResult {
    let mut rng = seed::rng(seed_value);
    let mut failures = 0;
    let mut detail = String::from("all epochs valid");
    let configs: [(GroupSet, usize); 4] = [
        (GroupSet::NONE, 8),
        ("volume".parse().expect("static"), 8),
        ("patient,volume".parse().expect("static"), 9),
        (GroupSet::ALL, 8),
    ];
    for _ in 0..datasets {
        let ds = random_sampler_dataset(&mut rng);
        for &(groups, m) in &configs {
            let plan = build_epoch(&ds, groups, m, rng.random()).expect("valid");
            if let Err(e) = check_epoch_plan(&ds, groups, &plan) {
                if failures == 0 {
                    detail = e;
                }
                failures += 1;
            }
        }
    }
    SuiteResult {
        name: "sampler-invariants",
        cases: datasets * configs.len(),
        failures,
        detail,
    }
}

/// Explicit pair lists per group for the brute-force deviation statistic.
pub fn deviation_pairs(ds: &DatasetIndex, grouping: Grouping) -> Vec<Vec<(usize, usize)>> {
    let n = ds.len();
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    let key = |r: usize| -> Option<u32> {
        let s = ds.slice(r);
        match grouping {
            Grouping::Dataset | Grouping::Adjacent => None,
            Grouping::Patient => Some(s.patient_id),
            Grouping::Volume => Some(s.volume_id),
        }
    };
    match grouping {
        Grouping::Dataset => {
            groups.push((0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect());
        }
        Grouping::Adjacent => {
            let vols: BTreeSet<u32> = ds.slices().iter().map(|s| s.volume_id).collect();
            for v in vols {
                let mut pairs = Vec::new();
                for a in 0..n {
                    for b in a + 1..n {
                        let (sa, sb) = (ds.slice(a), ds.slice(b));
                        if sa.volume_id == v
                            && sb.volume_id == v
                            && sa.slice_index.abs_diff(sb.slice_index) == 1
                        {
                            pairs.push((a, b));
                        }
                    }
                }
                groups.push(pairs);
            }
        }
        _ => {
            let keys: BTreeSet<u32> = (0..n).filter_map(key).collect();
            for k in keys {
                let mut pairs = Vec::new();
                for a in 0..n {
                    for b in a + 1..n {
                        if key(a) == Some(k) && key(b) == Some(k) {
                            pairs.push((a, b));
                        }
                    }
                }
                groups.push(pairs);
            }
        }
    }
    groups
}

pub fn deviation_suite(cases: usize, seed_value: u64) -> SuiteResult {
    let mut rng = seed::rng(seed_value);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..cases {
        let spec = SynthSpec {
            n_patients: rng.random_range(1..=4),
            volumes_per_patient: rng.random_range(1..=2),
            slices_per_volume: rng.random_range(2..=6),
            h: 2,
            w: 3,
            seed: rng.random(),
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).expect("valid").0;
        let pixels: Vec<Vec<f64>> = ds
            .slices()
            .iter()
            .map(|s| s.pixels.iter().map(|&p| p as f64).collect())
            .collect();
        for g in Grouping::ALL {
            let want = oracle::group_deviation(&pixels, &deviation_pairs(&ds, g));
            let got = group_deviation(&ds, g).ok();
            match (got, want) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a - b).abs());
                    if !((a - b).abs() < 1e-12) {
                        failures += 1;
                    }
                }
                (None, None) => {}
                _ => failures += 1,
            }
        }
    }
    SuiteResult {
        name: "group-deviation-vs-brute-force",
        cases,
        failures,
        detail: format!("max abs err {worst:.3e}"),
    }
}

pub fn run_all(seed_value: u64) -> Vec<SuiteResult> {
    vec![
        loss_suite(200, seed_value),
        gradient_suite(20, seed_value),
        two_approx_suite(100, seed_value),
        sampler_suite(50, seed_value),
        deviation_suite(20, seed_value),
    ]
}
