//! Randomized invariants of splitting, sampling, generation, CSV ingestion,
//! metrics and the GDRO weight update.

use std::collections::BTreeSet;

use crois_core::data::{
    generate_synthetic, load_embedding_csv_with, make_split, make_split_with_holdout, save_embedding_csv,
    split_val_in_half, subsample_to_minority, synthetic_group_sizes, GroupBalancedSampler,
};
use crois_core::metrics::evaluate_predictions;
use crois_core::{GdroState, GroupedDataset, SyntheticSpec, Weighting};
use ndarray::Array2;
use proptest::prelude::*;

fn dataset(n: usize, tags: &[usize]) -> GroupedDataset {
    let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64 * 0.5);
    let labels: Vec<usize> = (0..n).map(|i| tags[i % tags.len()] / 2).collect();
    let attrs: Vec<usize> = (0..n).map(|i| tags[i % tags.len()] % 2).collect();
    GroupedDataset::new("prop", x, labels, attrs, 2, 2).unwrap()
}

fn spec(n: usize, rho: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        rho,
        mu_core: 1.0,
        mu_spur: 2.5,
        d_noise: 2,
        sigma: 0.7,
        seed,
    }
}

#[test]
fn split_determinism_and_overlap_on_ten_rows() {
    let d = dataset(10, &[0, 1, 2, 3]);
    let a = make_split(&d, 0.3, 7, false).unwrap();
    assert_eq!(a, make_split(&d, 0.3, 7, false).unwrap());
    // every 3-subset of 10 rows is equally likely: expected overlap of two
    // independent draws is 3 * 3 / 10
    let draws: Vec<BTreeSet<usize>> = (0..2000)
        .map(|s| make_split(&d, 0.3, s, false).unwrap().labeled.into_iter().collect())
        .collect();
    let distinct = draws.iter().collect::<BTreeSet<_>>().len();
    assert!(distinct > 100, "only {distinct} distinct subsets of 120");
    let overlap: f64 = draws
        .windows(2)
        .map(|w| w[0].intersection(&w[1]).count() as f64)
        .sum::<f64>()
        / (draws.len() - 1) as f64;
    assert!((overlap - 0.9).abs() < 0.1, "mean overlap {overlap}");
    let mut hits = [0usize; 10];
    for s in &draws {
        for &i in s {
            hits[i] += 1;
        }
    }
    // binomial(2000, 0.3): sd about 20.5
    for (i, &h) in hits.iter().enumerate() {
        assert!((h as f64 - 600.0).abs() < 4.0 * 20.5, "row {i} drawn {h} times");
    }
}

#[test]
fn balanced_slots_have_uniform_group_frequency() {
    // every batch fills 2 slots per group, so the group frequency over 10^4
    // slots is exactly 1/4; the random part is which row fills a slot
    let members = vec![vec![0, 1, 2], vec![3, 4, 5, 6, 7], vec![8], vec![9, 10]];
    let sampler = GroupBalancedSampler::new(members.clone(), 8, 3).unwrap();
    let mut row_hits = [0usize; 11];
    let mut slots = 0;
    for batch in sampler.take(1250) {
        let mut per_group = [0usize; 4];
        for (&i, &g) in batch.indices.iter().zip(&batch.groups) {
            per_group[g] += 1;
            row_hits[i] += 1;
            assert!(members[g].contains(&i));
            slots += 1;
        }
        assert_eq!(per_group, [2, 2, 2, 2]);
    }
    assert_eq!(slots, 10_000);
    for (g, rows) in members.iter().enumerate() {
        let expect = 2500.0 / rows.len() as f64;
        for &i in rows {
            // with per-group reshuffles, draws of a row are within one pass of the mean
            assert!((row_hits[i] as f64 - expect).abs() <= 2.0, "group {g} row {i}: {}", row_hits[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn splits_partition_the_pool(n in 0usize..300, p in 0.0f64..=1.0, seed in any::<u64>(), stratify in any::<bool>()) {
        let d = dataset(n, &[0, 0, 0, 1, 2, 3, 3, 3]);
        let plan = make_split(&d, p, seed, stratify).unwrap();
        let mut all: Vec<usize> = plan.labeled.iter().chain(&plan.unlabeled).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        if !stratify {
            prop_assert_eq!(plan.labeled.len(), ((n as f64) * p).round() as usize);
        }
        prop_assert_eq!(&plan, &make_split(&d, p, seed, stratify).unwrap());
        prop_assert_eq!(d.group_reads() > 0, stratify);
    }

    #[test]
    fn holdout_is_disjoint_from_both_sides(n in 0usize..300, p in 0.0f64..=1.0, v in 0.0f64..=1.0, seed in any::<u64>()) {
        let d = dataset(n, &[0, 1, 2, 3]);
        let plan = make_split_with_holdout(&d, p, v, seed, false).unwrap();
        let mut all: Vec<usize> = plan.labeled.iter().chain(&plan.unlabeled).chain(&plan.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn val_halves_partition_their_input(n in 2usize..200, seed in any::<u64>()) {
        let input: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        let (a, b) = split_val_in_half(&input, seed).unwrap();
        prop_assert_eq!(a.len(), n.div_ceil(2));
        prop_assert_eq!(b.len(), n / 2);
        let mut union: Vec<usize> = a.iter().chain(&b).copied().collect();
        union.sort_unstable();
        prop_assert_eq!(union, input);
    }

    #[test]
    fn synthetic_group_counts_follow_the_formula(n in 40usize..2000, rho in 0.55f64..0.97, seed in any::<u64>()) {
        let sizes = synthetic_group_sizes(n, rho);
        prop_assume!(sizes.iter().all(|&c| c > 0));
        let d = generate_synthetic(&spec(n, rho, seed)).unwrap();
        prop_assert_eq!(d.group_counts(), sizes.to_vec());
        let minority = ((n as f64) * (1.0 - rho) / 2.0).round() as usize;
        prop_assert_eq!(sizes[1], minority);
        prop_assert_eq!(sizes[2], minority);
        prop_assert!(sizes[0].abs_diff(sizes[3]) <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
    }

    #[test]
    fn subsample_is_a_balanced_per_group_subset(tags in prop::collection::vec(0usize..4, 40), seed in any::<u64>()) {
        let d = dataset(40, &tags);
        let counts = d.group_counts();
        prop_assume!(counts.iter().all(|&c| c > 0));
        let sub = subsample_to_minority(&d, seed).unwrap();
        let groups = d.group_ids();
        let min = *counts.iter().min().unwrap();
        let mut got = [0usize; 4];
        for w in sub.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for &i in &sub {
            prop_assert!(i < 40);
            got[groups[i]] += 1;
        }
        prop_assert_eq!(got, [min; 4]);
    }

    #[test]
    fn balanced_epoch_counts_are_equal(sizes in prop::collection::vec(1usize..20, 4), quota in 1usize..10, seed in any::<u64>()) {
        let mut next = 0;
        let members: Vec<Vec<usize>> = sizes
            .iter()
            .map(|&s| {
                let v = (next..next + s).collect();
                next += s;
                v
            })
            .collect();
        let sampler = GroupBalancedSampler::new(members, quota * 4, seed).unwrap();
        let mut counts = [0usize; 4];
        for batch in sampler.take(10) {
            prop_assert_eq!(batch.has_duplicates, {
                let mut s = batch.indices.clone();
                s.sort_unstable();
                s.windows(2).any(|w| w[0] == w[1])
            });
            for g in batch.groups {
                counts[g] += 1;
            }
        }
        prop_assert_eq!(counts, [10 * quota; 4]);
    }

    #[test]
    fn csv_round_trip_is_the_identity(rows in 1usize..60, d in 1usize..5, seed in any::<u64>()) {
        let src = generate_synthetic(&spec(400, 0.8, seed)).unwrap();
        let idx: Vec<usize> = (0..rows).map(|i| (i * 37 + seed as usize % 7) % 400).collect();
        let base = src.subset(&idx);
        let x = Array2::from_shape_fn((rows, d), |(i, j)| base.features()[[i, j % base.input_dim()]] * (1.0 + j as f64) / 3.0);
        let ds = GroupedDataset::new("csv", x, base.labels().to_vec(), base.attributes().to_vec(), 2, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        save_embedding_csv(&ds, &path).unwrap();
        let once = load_embedding_csv_with(&path, 2, 2).unwrap();
        prop_assert_eq!(once.features(), ds.features());
        prop_assert_eq!(once.labels(), ds.labels());
        prop_assert_eq!(once.attributes(), ds.attributes());
        save_embedding_csv(&once, &path).unwrap();
        let twice = load_embedding_csv_with(&path, 2, 2).unwrap();
        prop_assert_eq!(twice.features(), once.features());
    }

    #[test]
    fn metrics_bounds_and_permutation_invariance(
        data in prop::collection::vec((0usize..2, 0usize..2, 0usize..4), 1..80),
        raw_pi in prop::collection::vec(0.01f64..1.0, 4),
        rot in 0usize..80,
    ) {
        let preds: Vec<usize> = data.iter().map(|t| t.0).collect();
        let labels: Vec<usize> = data.iter().map(|t| t.1).collect();
        let groups: Vec<usize> = data.iter().map(|t| t.2).collect();
        let s: f64 = raw_pi.iter().sum();
        let pi: Vec<f64> = raw_pi.iter().map(|p| p / s).collect();
        for w in [Weighting::Plain, Weighting::TrainWeighted(pi.clone())] {
            let m = evaluate_predictions(&preds, &labels, &groups, 4, &w).unwrap();
            let best = m.per_group_acc.iter().flatten().cloned().fold(0.0, f64::max);
            prop_assert!(m.worst_group_acc <= m.average_acc + 1e-12);
            prop_assert!(m.average_acc <= best + 1e-12);
            let k = rot % data.len();
            let rotate = |v: &[usize]| [&v[k..], &v[..k]].concat();
            let r = evaluate_predictions(&rotate(&preds), &rotate(&labels), &rotate(&groups), 4, &w).unwrap();
            prop_assert_eq!(&r.per_group_acc, &m.per_group_acc);
            prop_assert!((r.average_acc - m.average_acc).abs() < 1e-12);
        }
        let uniform = evaluate_predictions(&preds, &labels, &groups, 4, &Weighting::TrainWeighted(vec![0.25; 4])).unwrap();
        let present: Vec<f64> = uniform.per_group_acc.iter().flatten().copied().collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        prop_assert!((uniform.average_acc - mean).abs() < 1e-12);
    }

    #[test]
    fn q_stays_on_the_simplex_and_tracks_loss_order(
        losses in prop::collection::vec(prop::option::weighted(0.8, 0.0f64..5.0), 4),
        eta in 0.0f64..3.0,
        raw_q in prop::collection::vec(0.01f64..1.0, 4),
    ) {
        let mut state = GdroState::new(eta, 0.0, vec![10; 4]).unwrap();
        let s: f64 = raw_q.iter().sum();
        state.q = raw_q.iter().map(|q| q / s).collect();
        let before = state.q.clone();
        state.update(&losses).unwrap();
        prop_assert!((state.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(state.q.iter().all(|&q| q >= 0.0 && q.is_finite()));
        // q_g / q_g_before is exp(eta l_g) up to a common factor; absent groups count as l = 0
        let ratio: Vec<f64> = state.q.iter().zip(&before).map(|(a, b)| a / b).collect();
        for i in 0..4 {
            for j in 0..4 {
                let (li, lj) = (losses[i].unwrap_or(0.0), losses[j].unwrap_or(0.0));
                if li > lj {
                    prop_assert!(ratio[i] >= ratio[j] * (1.0 - 1e-12));
                }
                let expect = (eta * (li - lj)).exp();
                prop_assert!((ratio[i] / ratio[j] - expect).abs() <= 1e-9 * expect.max(1.0));
            }
        }
    }
}
