use gcl_core::coreset::{brute_force_k_center, cover_radius, d_phi, k_center_greedy};
use gcl_core::oracle;
use gcl_core::verify::rows_of;
use ndarray::Array2;
use proptest::prelude::*;

fn arb_points(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (4usize..=max_n, 1usize..=3).prop_flat_map(|(n, d)| {
        prop::collection::vec(-10.0f64..10.0, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

/// Rotation in the (0,1) plane when there are two or more columns, then a shift.
fn rigid(emb: &Array2<f64>, angle: f64, shift: f64) -> Array2<f64> {
    let mut out = emb.clone();
    if emb.ncols() >= 2 {
        let (c, s) = (angle.cos(), angle.sin());
        for mut r in out.rows_mut() {
            let (x, y) = (r[0], r[1]);
            r[0] = c * x - s * y;
            r[1] = s * x + c * y;
        }
    } else {
        out.mapv_inplace(|x| -x);
    }
    out.mapv_inplace(|x| x + shift);
    out
}

/// True when every greedy step has a unique farthest point.
fn tie_free(emb: &Array2<f64>, initial: &[usize], k: usize) -> bool {
    let s = k_center_greedy(emb, initial, k, 0).unwrap();
    let mut labeled = initial.to_vec();
    for p in s.trace() {
        let mut dists: Vec<f64> = (0..emb.nrows())
            .filter(|i| !labeled.contains(i))
            .map(|i| labeled.iter().map(|&j| d_phi(emb, i, j).unwrap()).fold(f64::INFINITY, f64::min))
            .collect();
        dists.sort_by(|a, b| b.total_cmp(a));
        if dists.len() > 1 && dists[0] - dists[1] < 1e-6 {
            return false;
        }
        labeled.push(p.index);
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn greedy_is_within_twice_the_optimum(emb in arb_points(12), k in 1usize..=4, first in 0usize..12) {
        let initial = vec![first % emb.nrows()];
        prop_assume!(k <= emb.nrows() - 1);
        let greedy = k_center_greedy(&emb, &initial, k, 0).unwrap();
        let (opt, _) = oracle::k_center(&rows_of(&emb), &initial, k);
        let (lib_opt, set) = brute_force_k_center(&emb, &initial, k).unwrap();
        prop_assert_eq!(opt, lib_opt);
        prop_assert_eq!(set.len(), k);
        prop_assert!(greedy.radius() <= 2.0 * opt + 1e-12);
    }

    #[test]
    fn trace_and_radius_are_monotone(emb in arb_points(30), k in 1usize..10) {
        let k = k.min(emb.nrows() - 1);
        let s = k_center_greedy(&emb, &[0], k, 0).unwrap();
        let t = s.trace();
        prop_assert!(t.windows(2).all(|w| w[1].min_dist <= w[0].min_dist));
        let mut prev = f64::INFINITY;
        for i in 1..=s.labeled().len() {
            let r = cover_radius(&emb, &s.labeled()[..i]).unwrap();
            prop_assert!(r <= prev);
            prop_assert_eq!(r, oracle::cover_radius(&rows_of(&emb), &s.labeled()[..i]));
            prev = r;
        }
        for (i, &d) in s.min_dist().iter().enumerate() {
            let want = s.labeled().iter().map(|&j| d_phi(&emb, i, j).unwrap()).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(d, want);
        }
    }

    #[test]
    fn selection_ignores_rigid_motions(emb in arb_points(20), angle in 0.0f64..6.28, shift in -5.0f64..5.0) {
        let k = 4.min(emb.nrows() - 1);
        prop_assume!(tie_free(&emb, &[0], k));
        let a = k_center_greedy(&emb, &[0], k, 0).unwrap();
        let b = k_center_greedy(&rigid(&emb, angle, shift), &[0], k, 0).unwrap();
        prop_assert_eq!(a.labeled(), b.labeled());
    }

    #[test]
    fn selection_follows_row_permutations(emb in arb_points(20), rot in 1usize..20) {
        let n = emb.nrows();
        let k = 4.min(n - 1);
        prop_assume!(tie_free(&emb, &[0], k));
        // new row r holds old row perm[r]
        let perm: Vec<usize> = (0..n).map(|r| (r + rot) % n).collect();
        let mut permuted = emb.clone();
        for (r, &old) in perm.iter().enumerate() {
            permuted.row_mut(r).assign(&emb.row(old));
        }
        let start = perm.iter().position(|&o| o == 0).unwrap();
        let a = k_center_greedy(&emb, &[0], k, 0).unwrap();
        let b = k_center_greedy(&permuted, &[start], k, 0).unwrap();
        let mapped: Vec<usize> = b.labeled().iter().map(|&r| perm[r]).collect();
        prop_assert_eq!(a.labeled(), &mapped[..]);
    }
}

#[test]
fn selecting_everything_leaves_zero_radius() {
    let emb = Array2::from_shape_fn((7, 2), |(i, j)| (i * 3 + j) as f64);
    let (r, _) = brute_force_k_center(&emb, &[2], 6).unwrap();
    assert_eq!(r, 0.0);
    assert_eq!(k_center_greedy(&emb, &[2], 6, 0).unwrap().radius(), 0.0);
}

#[test]
fn distance_is_symmetric() {
    let emb = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(d_phi(&emb, i, j).unwrap(), d_phi(&emb, j, i).unwrap());
        }
        assert_eq!(d_phi(&emb, i, i).unwrap(), 0.0);
    }
}
