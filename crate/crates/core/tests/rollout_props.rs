//! Property tests for the masked-rollout mechanics: floor-exact kept counts,
//! kept/dropped score ordering, mode equivalence at w = 1, and penalty
//! monotonicity, each over >= 1000 randomized cases.

use proptest::prelude::*;

use m2ac_core::model::{train_ensemble, EnsembleConfig, EnsembleModel, ModelTrainConfig};
use m2ac_core::rollout::{
    generate, mask_select, masking_schedule, penalized_reward, MaskSchedule, RolloutConfig,
    RolloutMode,
};
use m2ac_core::types::Transition;
use m2ac_core::{rng, Source};
use rand::Rng;

fn score_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..100.0, 0..200)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn kept_count_is_floor_of_w_times_len(scores in score_vec(), w in 0.01f64..=1.0) {
        let kept = mask_select(&scores, w).unwrap();
        let expected = ((w * scores.len() as f64) + 1e-9).floor() as usize;
        prop_assert_eq!(kept.len(), expected.min(scores.len()));
    }

    #[test]
    fn every_kept_score_at_most_every_dropped_score(scores in score_vec(), w in 0.01f64..=1.0) {
        let kept = mask_select(&scores, w).unwrap();
        let kept_set: std::collections::HashSet<usize> = kept.iter().copied().collect();
        let max_kept = kept
            .iter()
            .map(|&i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        for (i, &s) in scores.iter().enumerate() {
            if !kept_set.contains(&i) {
                prop_assert!(max_kept <= s);
            }
        }
    }

    #[test]
    fn penalty_is_monotone_in_u_and_alpha(
        r in -100.0f64..100.0,
        u1 in 0.0f64..50.0,
        du in 0.0f64..50.0,
        a1 in 0.0f64..10.0,
        da in 0.0f64..10.0,
    ) {
        // non-increasing in u
        prop_assert!(penalized_reward(r, u1 + du, a1) <= penalized_reward(r, u1, a1));
        // non-increasing in alpha
        prop_assert!(penalized_reward(r, u1, a1 + da) <= penalized_reward(r, u1, a1));
        // never exceeds the raw reward
        prop_assert!(penalized_reward(r, u1, a1) <= r);
    }

    #[test]
    fn linear_schedule_is_decreasing_and_in_range(h_max in 1usize..=30) {
        let mut prev = f64::INFINITY;
        for h in 0..h_max {
            let w = masking_schedule(h_max, h).unwrap();
            prop_assert!(w > 0.0 && w <= 1.0);
            prop_assert!(w <= prev);
            prev = w;
        }
    }
}

/// A small trained ensemble shared by the generation-level properties.
fn trained_ensemble(seed: u64) -> EnsembleModel {
    let mut ens = EnsembleModel::new(
        2,
        1,
        EnsembleConfig {
            members: 2,
            hidden: vec![8],
            ..EnsembleConfig::default()
        },
        seed,
    )
    .unwrap();
    let mut r = rng::stream(seed, "prop-data");
    let data: Vec<Transition> = (0..200)
        .map(|_| {
            let s = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let a = vec![r.gen_range(-1.0..1.0)];
            let next = vec![0.7 * s[0] + 0.2 * a[0], 0.9 * s[1] - 0.1 * a[0]];
            Transition::real(s, a, 0.3, next, false)
        })
        .collect();
    train_ensemble(
        &mut ens,
        &data,
        &ModelTrainConfig {
            max_epochs: 3,
            batch_size: 32,
            ..ModelTrainConfig::default()
        },
        seed,
    )
    .unwrap();
    ens
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn modes_are_equivalent_at_full_masking_rate(
        seed in 0u64..1000,
        batch in 1usize..20,
        h_max in 1usize..4,
    ) {
        let ens = trained_ensemble(seed % 4);
        let policy = |s: &[f64], _: &mut rand_pcg::Pcg64| vec![0.3 * s[0]];
        let starts: Vec<Vec<f64>> = {
            let mut r = rng::stream(seed, "prop-starts");
            (0..batch)
                .map(|_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)])
                .collect()
        };
        let run = |mode: RolloutMode| {
            let cfg = RolloutConfig {
                h_max,
                schedule: MaskSchedule::Constant(1.0),
                alpha: 1e-3,
                mode,
                estimator: Default::default(),
            };
            let mut r = rng::stream(seed, "prop-gen");
            generate(&ens, &policy, &starts, &cfg, &mut r, None).unwrap()
        };
        let non_stop = run(RolloutMode::NonStop);
        let hard_stop = run(RolloutMode::HardStop);
        prop_assert_eq!(non_stop.transitions, hard_stop.transitions);
    }

    #[test]
    fn generated_kept_counts_follow_floor_arithmetic(
        seed in 0u64..1000,
        batch in 1usize..40,
        h_max in 1usize..5,
        w_num in 1u32..=10,
    ) {
        let w = w_num as f64 / 10.0;
        let ens = trained_ensemble(seed % 4);
        let policy = |_: &[f64], _: &mut rand_pcg::Pcg64| vec![0.0];
        let starts = vec![vec![0.1, -0.2]; batch];
        let cfg = RolloutConfig {
            h_max,
            schedule: MaskSchedule::Constant(w),
            alpha: 0.0,
            mode: RolloutMode::HardStop,
            estimator: Default::default(),
        };
        let mut r = rng::stream(seed, "prop-counts");
        let out = generate(&ens, &policy, &starts, &cfg, &mut r, None).unwrap();
        let mut live = batch;
        for stats in &out.steps {
            prop_assert_eq!(stats.live, live);
            let expected = ((w * live as f64) + 1e-9).floor() as usize;
            prop_assert_eq!(stats.kept, expected);
            live = expected;
        }
        for t in &out.transitions {
            prop_assert_eq!(t.source, Source::Model);
            prop_assert!(t.uncertainty >= 0.0);
        }
    }
}
