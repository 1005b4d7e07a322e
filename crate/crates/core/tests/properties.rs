//! Property tests for the module-level invariants.

use proptest::prelude::*;

use trajattr_core::clustering::kmeans;
use trajattr_core::data::{Step, Trajectory};
use trajattr_core::embedding::{
    data_embedding, normalize_distances, wasserstein_simplex, EmbeddingSource,
};
use trajattr_core::encoder::{tokenize, TokenVocab, TrajectoryEmbedding};
use trajattr_core::gridworld::{GridAction, GridLayout, DEFAULT_LAYOUT};

fn simplex_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1e-6f64..1.0, dim).prop_map(|mut v| {
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_is_a_symmetric_premetric(
        p in simplex_strategy(10),
        q in simplex_strategy(10),
        r in simplex_strategy(10),
    ) {
        let pq = wasserstein_simplex(&p, &q).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(pq, wasserstein_simplex(&q, &p).unwrap());
        let pr = wasserstein_simplex(&p, &r).unwrap();
        let rq = wasserstein_simplex(&r, &q).unwrap();
        prop_assert!(pq <= pr + rq + 1e-9);
        prop_assert!(wasserstein_simplex(&p, &p).unwrap() == 0.0);
    }

    #[test]
    fn data_embedding_is_permutation_invariant_and_on_simplex(
        vectors in proptest::collection::vec(
            proptest::collection::vec(-5.0f64..5.0, 6),
            1..20,
        ),
        m in 0.5f64..100.0,
        t_soft in 0.1f64..10.0,
        shuffle_seed in any::<u64>(),
    ) {
        let embs: Vec<TrajectoryEmbedding> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| TrajectoryEmbedding { traj_id: i, vector: v.clone() })
            .collect();
        let base = data_embedding(embs.iter(), m, t_soft, EmbeddingSource::Original).unwrap();
        base.check_simplex().unwrap();
        prop_assert!(base.probs.iter().all(|&p| p > 0.0));

        // deterministic shuffle of the same multiset
        let mut order: Vec<usize> = (0..embs.len()).collect();
        let mut state = shuffle_seed | 1;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let shuffled = data_embedding(
            order.iter().map(|&i| &embs[i]),
            m,
            t_soft,
            EmbeddingSource::Original,
        )
        .unwrap();
        prop_assert_eq!(base.probs, shuffled.probs);
    }

    #[test]
    fn normalization_maps_the_maximum_to_exactly_one(
        raw in proptest::collection::vec(0.0f64..10.0, 1..12),
    ) {
        let pairs: Vec<(usize, f64)> = raw.iter().cloned().enumerate().collect();
        let out = normalize_distances(&pairs).unwrap();
        if out.degenerate {
            prop_assert!(raw.iter().all(|&d| d == 0.0));
        } else {
            prop_assert!(out.values.iter().any(|&(_, d)| d == 1.0));
            prop_assert!(out.values.iter().all(|&(_, d)| (0.0..=1.0).contains(&d)));
        }
    }

    #[test]
    fn tokenization_is_three_tokens_per_step(
        steps in proptest::collection::vec((0usize..49, 0usize..4, 0usize..3), 1..40),
    ) {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let vocab = TokenVocab::for_grid(&layout);
        let rewards = [1.0, -1.0, -0.1];
        let traj = Trajectory {
            id: 0,
            steps: steps
                .iter()
                .map(|&(obs, action, r)| Step { obs, action, reward: rewards[r] })
                .collect(),
        };
        let toks = tokenize(&traj, &vocab).unwrap();
        prop_assert_eq!(toks.len(), 3 * traj.steps.len());
        prop_assert!(toks.iter().all(|&t| t < vocab.size()));
    }

    #[test]
    fn kmeans_always_yields_a_partition(
        points in proptest::collection::vec(
            proptest::collection::vec(-10.0f64..10.0, 3),
            4..30,
        ),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let cs = kmeans(&points, k.min(points.len()), seed).unwrap();
        cs.check_partition().unwrap();
        prop_assert_eq!(cs.assignments.len(), points.len());
    }

    #[test]
    fn grid_steps_move_at_most_one_cell_with_bounded_rewards(
        row in 0usize..7,
        col in 0usize..7,
        action in 0usize..4,
    ) {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let state = layout.state_at(row, col).unwrap();
        prop_assume!(!state.terminal);
        prop_assume!(layout.cell(row, col) != trajattr_core::gridworld::CellKind::Wall);
        let (next, reward, done) = layout.step(&state, GridAction::from_id(action).unwrap()).unwrap();
        prop_assert!(next.row.abs_diff(row) + next.col.abs_diff(col) <= 1);
        prop_assert!(reward == 1.0 || reward == -1.0 || reward == -0.1);
        prop_assert_eq!(done, layout.cell(next.row, next.col).is_terminal());
    }
}
