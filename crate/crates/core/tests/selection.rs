use approxtopk_core::kernel::CandidateSet;
use approxtopk_core::metric::{compare, Direction, ScoredIndex};
use approxtopk_core::oracle::{brute_force_topk, measure_recall};
use approxtopk_core::recall::BinPlan;
use approxtopk_core::rescore::{exact_rescore, exact_rescore_with, Selection};
use approxtopk_core::{DenseMatrix, Metric};
use proptest::prelude::*;

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Max), Just(Direction::Min)]
}

/// Candidate rows drawn from a small value alphabet so ties are common;
/// roughly one in six bins is empty.
fn candidate_set() -> impl Strategy<Value = CandidateSet> {
    (1usize..5, 1usize..40, direction()).prop_flat_map(|(rows, l, dir)| {
        let n = l * 3;
        proptest::collection::vec((0u8..6, -3i8..4), rows * l).prop_map(move |cells| {
            let mut values = Vec::new();
            let mut indices = Vec::new();
            for (slot, (kind, v)) in cells.into_iter().enumerate() {
                let bin = slot % l;
                if kind == 0 {
                    values.push(dir.sentinel());
                    indices.push(n as u32);
                } else {
                    values.push(v as f32 * 0.5);
                    indices.push((bin * 3 + kind as usize % 3) as u32);
                }
            }
            let mut plan = BinPlan::exact(n, 1);
            plan.num_bins = l;
            CandidateSet {
                values,
                indices,
                rows,
                plan,
                direction: dir,
            }
        })
    })
}

/// Naive reference: full sort on (value, index) with the tie rule spelled out.
fn sort_then_truncate(c: &CandidateSet, i: usize, k: usize) -> Vec<(f32, u32)> {
    let mut row: Vec<(f32, u32)> = c
        .row_values(i)
        .iter()
        .zip(c.row_indices(i))
        .filter(|(_, &a)| a != c.invalid_index())
        .map(|(&v, &a)| (v, a))
        .collect();
    row.sort_by(|a, b| {
        let by_value = match c.direction {
            Direction::Max => b.0.partial_cmp(&a.0).unwrap(),
            Direction::Min => a.0.partial_cmp(&b.0).unwrap(),
        };
        by_value.then(a.1.cmp(&b.1))
    });
    row.truncate(k);
    row
}

proptest! {
    #[test]
    fn rescoring_equals_sort_and_truncate(c in candidate_set(), k_pick in 0usize..40) {
        let min_valid = (0..c.rows)
            .map(|i| c.row_indices(i).iter().filter(|&&a| a != c.invalid_index()).count())
            .min()
            .unwrap();
        if min_valid == 0 {
            prop_assert!(exact_rescore(&c, 1).is_err());
            return Ok(());
        }
        let k = k_pick % min_valid + 1;
        let partial = exact_rescore_with(&c, k, Selection::Partial).unwrap();
        let bitonic = exact_rescore_with(&c, k, Selection::Bitonic).unwrap();
        prop_assert_eq!(&partial, &bitonic);
        for i in 0..c.rows {
            let want = sort_then_truncate(&c, i, k);
            let got: Vec<(f32, u32)> = partial
                .row_values(i)
                .iter()
                .copied()
                .zip(partial.row_indices(i).iter().copied())
                .collect();
            prop_assert_eq!(got, want);
        }
        prop_assert!(exact_rescore(&c, min_valid + 1).is_err());
    }

    #[test]
    fn comparator_is_total_off_nan(a in -1e6f32..1e6, b in -1e6f32..1e6, i in 0u32..100, j in 0u32..100, dir in direction()) {
        let (x, y) = (ScoredIndex::new(a, i), ScoredIndex::new(b, j));
        if a != b {
            prop_assert!(compare(x, y, dir) ^ compare(y, x, dir));
        } else {
            prop_assert!(!compare(x, y, dir) && !compare(y, x, dir));
        }
    }

    #[test]
    fn relaxed_l2_ranks_like_l2(
        q in proptest::collection::vec(-10.0f64..10.0, 1..16),
        seed in proptest::collection::vec(-10.0f64..10.0, 32),
    ) {
        let d = q.len();
        let x = &seed[..d];
        let y = &seed[16..16 + d];
        let l2 = |v: &[f64]| v.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let relaxed = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / 2.0 - v.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
        let full = l2(x) - l2(y);
        prop_assume!(full.abs() > 1e-9);
        prop_assert_eq!(full > 0.0, relaxed(x) - relaxed(y) > 0.0);
    }

    #[test]
    fn recall_depends_only_on_index_sets(perm_seed in any::<u64>()) {
        let q = DenseMatrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [0.5, 0.0], [0.0, 2.0], [2.0, 0.0]]).unwrap();
        let truth = brute_force_topk(&q, &x, Metric::Mips, 3).unwrap();
        let mut shuffled = truth.clone();
        for i in 0..shuffled.rows {
            let row = &mut shuffled.indices[i * 3..(i + 1) * 3];
            row.rotate_left((perm_seed % 3) as usize);
            if perm_seed & 4 != 0 {
                row.swap(0, 2);
            }
        }
        prop_assert_eq!(measure_recall(&shuffled, &truth).unwrap().mean, 1.0);
    }
}

#[test]
fn oracle_with_k_equal_n_is_a_permutation() {
    let x = DenseMatrix::from_rows(&[[0.3, 1.0], [1.0, 1.0], [1.0, 1.0], [-2.0, 0.0], [0.0, 0.0]]).unwrap();
    let q = DenseMatrix::from_rows(&[[1.0, 2.0], [-1.0, 0.0]]).unwrap();
    for metric in [Metric::Mips, Metric::Cosine, Metric::Euclidean] {
        let t = brute_force_topk(&q, &x, metric, 5).unwrap();
        for i in 0..2 {
            let mut idx = t.row_indices(i).to_vec();
            idx.sort_unstable();
            assert_eq!(idx, [0, 1, 2, 3, 4]);
        }
    }
}

/// The rank of the relaxed distance equals the rank of the true squared
/// distance on f32 data once ties are excluded.
#[test]
fn relaxed_l2_ranks_like_l2_on_f32_triples() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 1000 {
        let d = rng.random_range(1..32);
        let v = |rng: &mut rand_chacha::ChaCha8Rng| (0..d).map(|_| rng.random_range(-4.0f32..4.0)).collect::<Vec<_>>();
        let (q, x, y) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let wide = |a: &[f32]| a.iter().map(|&t| t as f64).collect::<Vec<_>>();
        let (q, x, y) = (wide(&q), wide(&x), wide(&y));
        let l2 = |a: &[f64]| a.iter().zip(&q).map(|(s, t)| (s - t) * (s - t)).sum::<f64>();
        let relaxed = |a: &[f64]| a.iter().map(|s| s * s).sum::<f64>() / 2.0 - a.iter().zip(&q).map(|(s, t)| s * t).sum::<f64>();
        let full = l2(&x) - l2(&y);
        if full.abs() < 1e-9 {
            continue;
        }
        assert_eq!(full > 0.0, relaxed(&x) > relaxed(&y));
        checked += 1;
    }
}
