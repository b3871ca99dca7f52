use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rede_core::distance::{
    clip, conversation_buckets, raw_distance_matrix, rel_distance, utterance_distance_matrix, BucketMap, RelDistance,
};
use rede_core::testkit::{brute_force_distance, random_tree};
use rede_core::{Conversation, DependencyTree, Tokenizer, Vocab};

fn tree_strategy(max_n: usize) -> impl Strategy<Value = DependencyTree> {
    (1..=max_n, any::<u64>()).prop_map(|(n, seed)| random_tree(n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn distance_strategy() -> impl Strategy<Value = RelDistance> {
    prop_oneof![
        (1..=20i32).prop_map(RelDistance::Finite),
        (-20..=-1i32).prop_map(RelDistance::Finite),
        Just(RelDistance::Inf),
    ]
}

#[test]
fn derived_examples_match_oracle() {
    // chain [root,0,1]
    let edges = [(1, 0), (2, 1)];
    assert_eq!(brute_force_distance(3, &edges, 2, 0), RelDistance::Finite(2));
    assert_eq!(brute_force_distance(3, &edges, 0, 2), RelDistance::Finite(-2));
    // star [root,0,0]
    let edges = [(1, 0), (2, 0)];
    let star = DependencyTree::from_parents(vec![None, Some(0), Some(0)]).unwrap();
    let m = utterance_distance_matrix(&star, 7);
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(m.get(i, j), clip(brute_force_distance(3, &edges, i, j), 7));
        }
    }
}

proptest! {
    #[test]
    fn rel_distance_matches_brute_force(tree in tree_strategy(12)) {
        let n = tree.len();
        let edges: Vec<_> = tree.edges().collect();
        let m = raw_distance_matrix(&tree);
        for i in 0..n {
            for j in 0..n {
                let expected = brute_force_distance(n, &edges, i, j);
                prop_assert_eq!(rel_distance(&tree, i, j).unwrap(), expected);
                prop_assert_eq!(m.get(i, j), expected);
            }
        }
    }

    #[test]
    fn antisymmetric_and_never_zero(tree in tree_strategy(12)) {
        let n = tree.len();
        for i in 0..n {
            for j in 0..n {
                let d = rel_distance(&tree, i, j).unwrap();
                prop_assert_ne!(d, RelDistance::Finite(0));
                if i != j {
                    if let RelDistance::Finite(v) = d {
                        prop_assert_eq!(rel_distance(&tree, j, i).unwrap(), RelDistance::Finite(-v));
                    } else {
                        prop_assert_eq!(rel_distance(&tree, j, i).unwrap(), RelDistance::Inf);
                    }
                }
            }
        }
    }

    #[test]
    fn finite_iff_ancestor_related(tree in tree_strategy(12)) {
        let m = utterance_distance_matrix(&tree, 100);
        for i in 0..tree.len() {
            prop_assert_eq!(m.get(i, i), RelDistance::Finite(1));
            for j in 0..tree.len() {
                let related = i == j || tree.ancestors(i).any(|a| a == j) || tree.ancestors(j).any(|a| a == i);
                prop_assert_eq!(m.get(i, j).is_finite(), related);
            }
        }
    }

    #[test]
    fn every_node_reaches_root(tree in tree_strategy(30)) {
        for i in 1..tree.len() {
            let path: Vec<usize> = tree.ancestors(i).collect();
            prop_assert!(path.len() < tree.len());
            prop_assert_eq!(path.last().copied(), Some(0));
        }
    }

    #[test]
    fn clip_idempotent_and_monotone(d in distance_strategy(), t1 in 1usize..10, t2 in 1usize..10) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert_eq!(clip(clip(d, hi), hi), clip(d, hi));
        if d.is_finite() && clip(d, hi) == RelDistance::Inf {
            prop_assert_eq!(clip(d, lo), RelDistance::Inf);
        }
    }

    #[test]
    fn buckets_depend_only_on_utterance_pair(tree in tree_strategy(6), lens in prop::collection::vec(1usize..4, 6), tau in 1usize..8) {
        let n = tree.len();
        let texts: Vec<String> = (0..n).map(|i| vec!["w"; lens[i]].join(" ")).collect();
        let tok = Tokenizer::new(Vocab::build(["w"]), true);
        let turns: Vec<(&str, &str)> = texts.iter().map(|t| ("s", t.as_str())).collect();
        let conv = Conversation::from_texts(&turns, tree.clone(), &tok).unwrap();
        let grid = conversation_buckets(&conv, tau).unwrap();
        let map = BucketMap::new(tau).unwrap();
        let m = utterance_distance_matrix(&tree, tau);
        for p in 0..conv.len() {
            for q in 0..conv.len() {
                let (u, v) = (conv.token_to_utt[p].unwrap(), conv.token_to_utt[q].unwrap());
                prop_assert_eq!(grid.get(p, q), map.index(m.get(u, v)).unwrap());
            }
        }
    }
}
