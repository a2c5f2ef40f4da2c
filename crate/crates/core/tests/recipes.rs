//! Recipe contracts: label isolation, validation halving, error paths, the
//! ablation tables and pinned-seed comparisons against ERM.

use crois_core::data::sample_fraction;
use crois_core::diffnet::MlpModel;
use crois_core::metrics::evaluate;
use crois_core::objectives::group_losses;
use crois_core::pipeline::{
    crois_two_phase, epoch_ablation, ncrt_two_phase, prediction_change_analysis, run_crois_reduced_val,
    run_crois_val_only, run_erm, run_jtt_lite, run_recipe, JttOverride,
};
use crois_core::{Benchmark, Error, Recipe, RecipeConfig, Scope, SyntheticBenchmark, Weighting};

fn bench(n_train: usize, n_val: usize, d_noise: usize) -> Benchmark {
    SyntheticBenchmark {
        n_train,
        n_val,
        n_test: 1000,
        d_noise,
        ..Default::default()
    }
    .generate()
    .unwrap()
}

fn quick(recipe: Recipe) -> RecipeConfig {
    let mut cfg = RecipeConfig::new(recipe);
    cfg.hidden = vec![16];
    cfg.seeds = vec![0];
    for phase in [&mut cfg.phase1, &mut cfg.phase2] {
        phase.lr = 0.01;
        phase.epochs = 4;
    }
    cfg.jtt = Some(JttOverride { epochs: 2, hidden: None });
    cfg
}

/// Settings of the pinned comparisons against ERM.
fn pinned(recipe: Recipe) -> RecipeConfig {
    let mut cfg = RecipeConfig::new(recipe);
    cfg.hidden = vec![64];
    cfg.seeds = vec![0, 1, 2];
    for phase in [&mut cfg.phase1, &mut cfg.phase2] {
        phase.lr = 0.01;
        phase.l2 = 0.0;
        phase.epochs = 50;
    }
    cfg.jtt = Some(JttOverride { epochs: 1, hidden: None });
    cfg
}

#[test]
fn label_free_phases_read_no_group_labels() {
    let b = bench(800, 400, 10);
    for recipe in [
        Recipe::Crois,
        Recipe::Ncrt,
        Recipe::CroisValOnly,
        Recipe::CroisReducedVal,
        Recipe::JttLite,
    ] {
        let result = run_recipe(&b, &quick(recipe)).unwrap();
        for run in &result.runs {
            assert_eq!(run.phase1_group_label_reads, Some(0), "{}", recipe.tag());
        }
    }
    let erm = run_recipe(&b, &quick(Recipe::Erm)).unwrap();
    assert_eq!(erm.runs[0].phase1_group_label_reads, Some(0));
}

#[test]
fn reruns_are_bit_identical() {
    let b = bench(800, 400, 10);
    for recipe in [Recipe::CroisValOnly, Recipe::JttLite, Recipe::GdroFull] {
        let mut cfg = quick(recipe);
        cfg.retrain_scope = Scope::Full;
        let first = run_recipe(&b, &cfg).unwrap();
        assert_eq!(first, run_recipe(&b, &cfg).unwrap(), "{}", recipe.tag());
    }
}

#[test]
fn val_only_retrains_on_the_larger_half() {
    let b = bench(800, 401, 10);
    let run = &run_crois_val_only(&b, &quick(Recipe::CroisValOnly)).unwrap().runs[0];
    assert_eq!(run.retrain_size, Some(201));
    assert_eq!(run.train_size, 800);
    let phase2 = run.final_phase();
    assert!(phase2.records[0].val.as_ref().is_some_and(|v| v.groups.is_some()));
}

#[test]
fn ncrt_retrains_on_rows_it_already_fitted() {
    let b = bench(800, 400, 10);
    let two = ncrt_two_phase(&b, &quick(Recipe::Ncrt), 0).unwrap();
    assert_eq!(two.run.train_size, 800);
    assert!(two.retrain_rows.iter().all(|&i| i < 800));
    assert_eq!(two.retrain_rows.len(), 240);
}

#[test]
fn reduced_val_at_five_percent_completes() {
    let b = bench(2000, 4000, 20);
    let mut cfg = quick(Recipe::CroisReducedVal);
    cfg.val_fraction = 0.05;
    let result = run_crois_reduced_val(&b, &cfg).unwrap();
    let run = &result.runs[0];
    assert_eq!(run.retrain_size, Some(200));
    assert!(run.test.worst_group_acc.is_finite());
    assert!(run.notes[0].contains("batch quota"));
    assert_eq!(run.final_phase().criterion, Some(crois_core::Criterion::TrainWorstGroup));
}

#[test]
fn reduced_val_losing_a_group_is_an_empty_group_error() {
    let b = bench(800, 200, 10);
    let mut cfg = quick(Recipe::CroisReducedVal);
    // 200 rows at rho 0.95 have 5 rows per minority group; find a seed whose
    // 2% draw misses one
    cfg.val_fraction = 0.02;
    let groups = b.val.group_ids();
    let seed = (0..200u64)
        .find(|&s| {
            let split = crois_core::seed::derive_seed(
                s,
                &[crois_core::seed::stream_label("split")],
            );
            let kept = sample_fraction(b.val.len(), 0.02, split).unwrap();
            (0..4).any(|g| kept.iter().all(|&i| groups[i] != g))
        })
        .expect("some draw misses a group");
    cfg.seeds = vec![seed];
    assert!(matches!(run_crois_reduced_val(&b, &cfg), Err(Error::EmptyGroup { .. })));
}

#[test]
fn jtt_with_a_perfect_short_model_has_an_empty_pseudo_group() {
    // a wide core margin and little noise: three epochs already classify
    // every training row correctly
    let b = SyntheticBenchmark {
        n_train: 400,
        n_val: 200,
        n_test: 200,
        mu_core: 6.0,
        mu_spur: 0.5,
        d_noise: 0,
        sigma: 0.2,
        ..Default::default()
    }
    .generate()
    .unwrap();
    let mut cfg = quick(Recipe::JttLite);
    cfg.phase1.lr = 0.1;
    cfg.jtt = Some(JttOverride { epochs: 3, hidden: None });
    match run_jtt_lite(&b, &cfg) {
        Err(Error::EmptyGroup { group, .. }) => assert!(group % 2 == 1, "pseudo-group {group} is a correct one"),
        other => panic!("expected an empty pseudo-group, got {other:?}"),
    }
}

#[test]
fn epoch_ablation_rows_and_range() {
    let b = bench(800, 400, 10);
    let cfg = quick(Recipe::Crois);
    let rows = epoch_ablation(&b, &cfg, &[0]).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].test_wg.mean.is_finite());
    let rows = epoch_ablation(&b, &cfg, &[0, 2, 4]).unwrap();
    assert_eq!(rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["0", "2", "4"]);
    assert!(matches!(epoch_ablation(&b, &cfg, &[5]), Err(Error::Range(_))));
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn phase1_val_accuracy_tracks_phase2_worst_group() {
    let b = bench(2000, 1000, 100);
    let mut cfg = pinned(Recipe::Crois);
    cfg.phase1.lr = 0.001;
    cfg.phase2.epochs = 20;
    let epochs = [0, 1, 2, 4, 8, 16, 32, 50];
    let rows = epoch_ablation(&b, &cfg, &epochs).unwrap();
    let val_avg: Vec<f64> = rows.iter().map(|r| r.val_avg.unwrap().mean).collect();
    let val_wg: Vec<f64> = rows.iter().map(|r| r.val_wg.unwrap().mean).collect();
    let r = pearson(&val_avg, &val_wg);
    println!("phase-1 val avg {val_avg:.3?}\nphase-2 val wg {val_wg:.3?}\nr = {r:.3}");
    assert!(r > 0.0, "correlation {r}");
}

#[test]
fn prediction_changes_match_a_loop_oracle() {
    let b = bench(400, 200, 5);
    let model = MlpModel::new(b.train.input_dim(), &[8], 2, 3);
    let d_u: Vec<usize> = (0..400).filter(|i| i % 3 != 0).collect();
    let d_l: Vec<usize> = (0..400).filter(|i| i % 3 == 0).collect();
    let splits = [("D_U", d_u.as_slice()), ("D_L", d_l.as_slice())];

    let same = prediction_change_analysis(&model, &model, &b.train, &splits).unwrap();
    assert_eq!(same.len(), 2);
    for block in &same {
        assert_eq!(block.rows.len(), 5);
        assert!(block.rows.iter().all(|r| r.changed == 0 && r.acc_before == r.acc_after));
        assert_eq!(block.worst_group_before, block.worst_group_after);
    }

    let mut flipped = model.clone();
    flipped.head_mut().weight.mapv_inplace(|w| -w);
    flipped.head_mut().bias.mapv_inplace(|w| -w);
    let blocks = prediction_change_analysis(&model, &flipped, &b.train, &splits).unwrap();
    let before = model.logits(b.train.features()).unwrap();
    let after = flipped.logits(b.train.features()).unwrap();
    let labels = b.train.labels();
    let groups = b.train.group_ids();
    for (block, (_, rows)) in blocks.iter().zip(splits) {
        let mut changed = [0usize; 4];
        let mut ok_before = [0usize; 4];
        let mut ok_after = [0usize; 4];
        let mut size = [0usize; 4];
        for &i in rows {
            let pb = usize::from(before[[i, 1]] > before[[i, 0]]);
            let pa = usize::from(after[[i, 1]] > after[[i, 0]]);
            let g = groups[i];
            size[g] += 1;
            changed[g] += usize::from(pb != pa);
            ok_before[g] += usize::from(pb == labels[i]);
            ok_after[g] += usize::from(pa == labels[i]);
        }
        for g in 0..4 {
            let row = &block.rows[g];
            assert_eq!(row.group, Some(g));
            assert_eq!(row.size, size[g]);
            assert_eq!(row.changed, changed[g]);
            assert_eq!(row.acc_before, ok_before[g] as f64 / size[g] as f64);
            assert_eq!(row.acc_after, ok_after[g] as f64 / size[g] as f64);
            // binary flip: every row whose logits differ changes side
            assert_eq!(changed[g], size[g]);
        }
        let total = &block.rows[4];
        assert_eq!(total.group, None);
        assert_eq!(total.changed, rows.len());
        assert_eq!(total.changed_pct, 100.0);
    }
}

#[test]
fn held_out_labeled_rows_are_harder_than_fitted_ones() {
    // with a memorizing phase-1 model the NCRT retraining rows start with
    // near-zero loss, the CROIS ones do not
    let b = bench(2000, 1000, 100);
    let mut cfg = pinned(Recipe::Crois);
    cfg.seeds = vec![0];
    cfg.hidden = vec![256];
    cfg.phase1.lr = 0.05;
    cfg.phase1.epochs = 30;
    cfg.phase2.epochs = 1;
    let start_loss = |two: &crois_core::pipeline::TwoPhase| {
        let logits = two.feature_model.logits(two.retrain_set.features()).unwrap();
        let report = group_losses(&logits, two.retrain_set.labels(), &two.retrain_set.group_ids(), 4);
        report.losses.iter().flatten().cloned().fold(0.0, f64::max)
    };
    let crois = start_loss(&crois_two_phase(&b, &cfg, 0).unwrap());
    cfg.recipe = Recipe::Ncrt;
    let ncrt_run = ncrt_two_phase(&b, &cfg, 0).unwrap();
    let fitted = evaluate(&ncrt_run.feature_model, &b.train, &Weighting::Plain).unwrap();
    assert_eq!(fitted.average_acc, 1.0, "phase-1 model does not memorize");
    let ncrt = start_loss(&ncrt_run);
    println!("worst-group loss at the start of phase 2: CROIS {crois:.4}, NCRT {ncrt:.4}");
    assert!(ncrt < 0.1, "NCRT start loss {ncrt}");
    assert!(crois > 10.0 * ncrt);
}

#[test]
fn robust_recipes_beat_erm_on_pinned_seeds() {
    let b = bench(2000, 1000, 100);
    let erm = run_erm(&b, &pinned(Recipe::Erm)).unwrap().mean_wg();
    let val_only = run_crois_val_only(&b, &pinned(Recipe::CroisValOnly)).unwrap().mean_wg();
    let jtt = run_jtt_lite(&b, &pinned(Recipe::JttLite)).unwrap().mean_wg();
    println!("mean wg: ERM {erm:.3}, val-only {val_only:.3}, jtt-lite {jtt:.3}");
    assert!(val_only > erm);
    assert!(jtt > erm);
}
