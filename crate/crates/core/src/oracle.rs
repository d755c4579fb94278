//! Brute-force reference implementations.
//!
//! Nothing here calls into the production code paths it is used to check:
//! each function is a direct transcription of the defining formula using
//! plain nested loops over `Vec`s.

use crate::group::GroupType;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn cos(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let na = if na > eps { na } else { eps };
    let nb = if nb > eps { nb } else { eps };
    dot(a, b) / (na * nb)
}

/// Per-row group identity for the brute-force losses.
#[derive(Debug, Clone, Copy)]
pub struct RefMeta {
    pub patient: u32,
    pub volume: u32,
    pub slice_index: u32,
}

fn in_group(a: &RefMeta, b: &RefMeta, group: GroupType) -> bool {
    match group {
        GroupType::Patient => a.patient == b.patient,
        GroupType::Volume => a.volume == b.volume,
        GroupType::Slice => {
            a.volume == b.volume && (a.slice_index as i64 - b.slice_index as i64).abs() <= 1
        }
    }
}

/// NT-Xent by its definition: `2N` rows, positive at offset `N`.
pub fn ntxent(z: &[Vec<f64>], tau: f64, eps: f64) -> f64 {
    let rows = z.len();
    let n = rows / 2;
    let mut total = 0.0;
    for i in 0..rows {
        let p = if i < n { i + n } else { i - n };
        let mut den = 0.0;
        for k in 0..rows {
            if k != i {
                den += (cos(&z[i], &z[k], eps) / tau).exp();
            }
        }
        total += -((cos(&z[i], &z[p], eps) / tau).exp() / den).ln();
    }
    total / rows as f64
}

/// Group contrastive loss by its definition. `meta` has one entry per
/// standard view; row `i + N` reuses `meta[i]`.
pub fn group(z: &[Vec<f64>], meta: &[RefMeta], group: GroupType, tau: f64, eps: f64) -> f64 {
    let n = meta.len();
    let m = |r: usize| &meta[r % n];
    let g = match group {
        GroupType::Slice => {
            let mut acc = 0.0;
            for i in 0..n {
                let mut c = 1.0;
                for j in 0..n {
                    if j != i && in_group(&meta[i], &meta[j], group) {
                        c += 1.0;
                    }
                }
                acc += c;
            }
            acc / n as f64
        }
        _ => {
            let mut distinct: Vec<u32> = Vec::new();
            for r in meta {
                let key = if group == GroupType::Volume { r.volume } else { r.patient };
                if !distinct.contains(&key) {
                    distinct.push(key);
                }
            }
            n as f64 / distinct.len() as f64
        }
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..2 * n {
            if j == i || !in_group(m(i), m(j), group) {
                continue;
            }
            let mut den = 0.0;
            for k in 0..2 * n {
                let keep = k != i && (in_group(m(i), m(k), group) || m(k).patient != m(i).patient);
                if keep {
                    den += (cos(&z[i], &z[k], eps) / tau).exp();
                }
            }
            total += ((cos(&z[i], &z[j], eps) / tau).exp() / den).ln();
        }
    }
    -total / (n as f64 * g)
}

/// Weighted sum `l0 * NT-Xent + lp * patient + lv * volume + ls * slice`.
pub fn combined(z: &[Vec<f64>], meta: &[RefMeta], lambdas: [f64; 4], tau: f64, eps: f64) -> f64 {
    let mut total = 0.0;
    if lambdas[0] != 0.0 {
        total += lambdas[0] * ntxent(z, tau, eps);
    }
    let groups = [GroupType::Patient, GroupType::Volume, GroupType::Slice];
    for (l, gt) in lambdas[1..].iter().zip(groups) {
        if *l != 0.0 {
            total += l * group(z, meta, gt, tau, eps);
        }
    }
    total
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], step: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        out[i] = (up - down) / (2.0 * step);
    }
    out
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Mean pairwise absolute deviation over explicit groups of pair lists,
/// after min-max normalization over all pixels.
pub fn group_deviation(pixels: &[Vec<f64>], groups: &[Vec<(usize, usize)>]) -> Option<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in pixels {
        for &p in row {
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    let norm = |p: f64| if hi > lo { (p - lo) / (hi - lo) } else { 0.0 };
    let mut sum = 0.0;
    let mut count = 0usize;
    for pairs in groups {
        if pairs.is_empty() {
            continue;
        }
        let mut gsum = 0.0;
        for &(a, b) in pairs {
            let mut d = 0.0;
            for c in 0..pixels[a].len() {
                d += (norm(pixels[a][c]) - norm(pixels[b][c])).abs();
            }
            gsum += d / pixels[a].len() as f64;
        }
        sum += gsum / pairs.len() as f64;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// `max_i min_{j in centers} d(i, j)`; infinite when `centers` is empty.
pub fn cover_radius(points: &[Vec<f64>], centers: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for p in points {
        let mut best = f64::INFINITY;
        for &c in centers {
            best = best.min(euclid(p, &points[c]));
        }
        worst = worst.max(best);
    }
    worst
}

/// Exhaustive k-center: best radius over every way of adding `k` centers
/// to `initial`, with the lexicographically first optimal addition.
pub fn k_center(points: &[Vec<f64>], initial: &[usize], k: usize) -> (f64, Vec<usize>) {
    let candidates: Vec<usize> = (0..points.len()).filter(|i| !initial.contains(i)).collect();
    let mut best = (f64::INFINITY, Vec::new());
    let mut chosen = Vec::with_capacity(k);
    fn rec(
        points: &[Vec<f64>],
        initial: &[usize],
        candidates: &[usize],
        start: usize,
        k: usize,
        chosen: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if chosen.len() == k {
            let mut centers = initial.to_vec();
            centers.extend_from_slice(chosen);
            let r = cover_radius(points, &centers);
            if r < best.0 {
                *best = (r, chosen.clone());
            }
            return;
        }
        for idx in start..candidates.len() {
            chosen.push(candidates[idx]);
            rec(points, initial, candidates, idx + 1, k, chosen, best);
            chosen.pop();
        }
    }
    rec(points, initial, &candidates, 0, k, &mut chosen, &mut best);
    best
}

/// Mean silhouette from the textbook definition; singleton clusters score 0
/// and `0/0` is taken as 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut own_sum = 0.0;
        let mut own_count = 0usize;
        let mut other: Vec<(usize, f64, usize)> = Vec::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = euclid(&points[i], &points[j]);
            if labels[j] == labels[i] {
                own_sum += d;
                own_count += 1;
            } else if let Some(e) = other.iter_mut().find(|e| e.0 == labels[j]) {
                e.1 += d;
                e.2 += 1;
            } else {
                other.push((labels[j], d, 1));
            }
        }
        if own_count == 0 {
            continue;
        }
        let a = own_sum / own_count as f64;
        let mut b = f64::INFINITY;
        for e in &other {
            b = b.min(e.1 / e.2 as f64);
        }
        let m = if a > b { a } else { b };
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}
