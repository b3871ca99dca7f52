use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rede_core::conversation::{parse_record, ConversationRecord, DependencyEdge, UtteranceRecord};
use rede_core::testkit::random_tree;
use rede_core::{load_conversation, Tokenizer, Vocab};

fn record_strategy() -> impl Strategy<Value = ConversationRecord> {
    (
        prop::collection::vec(("[a-c]{1,3}", prop::collection::vec("[a-z]{1,4}", 1..5)), 1..8),
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(utts, seed, with_deps)| {
            let n = utts.len();
            let tree = random_tree(n, &mut ChaCha8Rng::seed_from_u64(seed));
            ConversationRecord {
                utterances: utts
                    .into_iter()
                    .map(|(speaker, words)| UtteranceRecord {
                        speaker,
                        text: words.join(" "),
                    })
                    .collect(),
                dependencies: with_deps.then(|| tree.edges().map(|(from, to)| DependencyEdge { from, to }).collect()),
            }
        })
}

proptest! {
    #[test]
    fn serialize_load_round_trip(rec in record_strategy()) {
        let json = serde_json::to_vec(&rec).unwrap();
        let tok = Tokenizer::new(Vocab::build(rec.texts()), true);
        let conv = load_conversation(&json, &tok).unwrap();
        let again = load_conversation(conv.to_json().as_bytes(), &tok).unwrap();
        prop_assert_eq!(&again, &conv);
        prop_assert_eq!(parse_record(conv.to_json().as_bytes()).unwrap().utterances, rec.utterances);
    }

    #[test]
    fn flatten_is_a_bijection_after_prefix(rec in record_strategy(), cls in any::<bool>()) {
        let tok = Tokenizer::new(Vocab::build(rec.texts()), cls);
        let conv = rec.into_conversation(&tok).unwrap();
        prop_assert_eq!(conv.token_to_utt.len(), conv.tokens.len());
        let mut pos = conv.prefix_len;
        for (u, utt) in conv.utterances.iter().enumerate() {
            for (offset, &t) in utt.tokens.iter().enumerate() {
                prop_assert_eq!(conv.token_to_utt[pos], Some(u));
                prop_assert_eq!(conv.tokens[pos], t, "offset {}", offset);
                pos += 1;
            }
        }
        prop_assert_eq!(pos, conv.len());
        let owners: Vec<usize> = conv.token_to_utt.iter().map(|o| o.unwrap()).collect();
        prop_assert!(owners.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(owners.iter().all(|&o| o < conv.utterance_count()));
    }
}
