//! Synthetic "dependency pointer" classification task.
//!
//! One utterance (the query) carries a cue word. Several earlier utterances
//! each carry one answer word. The label is the answer word found in the
//! utterance the query depends on; every other answer word sits in an
//! utterance that is neither an ancestor nor a descendant of the query.
//!
//! Candidate utterances, answer classes and the labelled candidate are
//! drawn before the tree, and the tree is then sampled conditioned on them,
//! so the token sequence alone says nothing about which candidate is right.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, ConversationRecord, DependencyTree, Tokenizer, Vocab};
use crate::error::{Error, Result};

pub const CUE_WORD: &str = "query";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub utterances: usize,
    pub distractors: usize,
    /// Number of distinct answer words, which is also the number of classes.
    pub classes: usize,
    pub filler_words: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            utterances: 8,
            distractors: 3,
            classes: 8,
            filler_words: 24,
            min_tokens: 2,
            max_tokens: 3,
            train_size: 2000,
            dev_size: 200,
            test_size: 500,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.utterances < 3 {
            return Err(Error::validation("task needs at least 3 utterances"));
        }
        if self.distractors < 2 {
            return Err(Error::validation("task needs at least 2 distractors"));
        }
        // candidates live in utterances 1..q with q <= N-1
        if self.distractors + 1 > self.utterances - 2 {
            return Err(Error::validation(format!(
                "infeasible task: {} candidates do not fit between the root and the query among {} utterances",
                self.distractors + 1,
                self.utterances
            )));
        }
        if self.classes < self.distractors + 1 {
            return Err(Error::validation(format!(
                "{} classes cannot give {} distinct candidates",
                self.classes,
                self.distractors + 1
            )));
        }
        if self.filler_words == 0 || self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::validation("bad filler word or utterance length settings"));
        }
        Ok(())
    }

    /// Accuracy of guessing uniformly among the candidate answers.
    pub fn chance_rate(&self) -> f64 {
        1.0 / (1 + self.distractors) as f64
    }

    pub fn answer_word(class: usize) -> String {
        format!("ans{class}")
    }

    /// Fixed vocabulary: specials, cue, answers, fillers.
    pub fn vocab(&self) -> Vocab {
        let mut words = vec![CUE_WORD.to_string()];
        words.extend((0..self.classes).map(Self::answer_word));
        words.extend((0..self.filler_words).map(|i| format!("w{i}")));
        Vocab::from(words)
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.vocab(), true)
    }

    /// Longest flat sequence the generator can emit, including `<cls>`.
    pub fn max_sequence_len(&self) -> usize {
        1 + self.utterances * self.max_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub conversation: Conversation,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: TaskConfig,
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Builds all three splits. Each split draws from its own ChaCha stream of
/// the same seed, so splits never share random draws.
pub fn generate_task(config: &TaskConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let tokenizer = config.tokenizer();
    let make = |split: Split, size: usize| -> Result<Vec<Example>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(split.stream());
        (0..size)
            .map(|_| generate_example(config, &tokenizer, &mut rng))
            .collect()
    };
    Ok(Dataset {
        config: config.clone(),
        vocab: tokenizer.vocab.clone(),
        train: make(Split::Train, config.train_size)?,
        dev: make(Split::Dev, config.dev_size)?,
        test: make(Split::Test, config.test_size)?,
    })
}

const TREE_ATTEMPTS: usize = 256;

fn generate_example(config: &TaskConfig, tokenizer: &Tokenizer, rng: &mut impl Rng) -> Result<Example> {
    let n = config.utterances;
    let k = config.distractors + 1;

    // query after at least k non-root utterances
    let query = rng.random_range(k + 1..n);
    let mut slots: Vec<usize> = (1..query).collect();
    slots.shuffle(rng);
    let candidates = &slots[..k];
    let mut classes: Vec<usize> = (0..config.classes).collect();
    classes.shuffle(rng);
    let label_slot = rng.random_range(0..k);
    let label_utt = candidates[label_slot];
    let label = classes[label_slot];

    let mut words: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let len = rng.random_range(config.min_tokens..=config.max_tokens);
            (0..len)
                .map(|_| format!("w{}", rng.random_range(0..config.filler_words)))
                .collect()
        })
        .collect();
    let mut plant = |utt: usize, word: String| {
        let pos = rng.random_range(0..words[utt].len());
        words[utt][pos] = word;
    };
    plant(query, CUE_WORD.to_string());
    for (slot, &utt) in candidates.iter().enumerate() {
        plant(utt, TaskConfig::answer_word(classes[slot]));
    }

    let distractors: Vec<usize> = candidates.iter().copied().filter(|&u| u != label_utt).collect();
    let tree = sample_tree(n, query, label_utt, &distractors, rng);

    let turns: Vec<(String, String)> = words
        .into_iter()
        .enumerate()
        .map(|(i, w)| (format!("speaker{}", i % 3), w.join(" ")))
        .collect();
    Ok(Example {
        conversation: Conversation::from_texts(&turns, tree, tokenizer)?,
        label,
    })
}

/// Random recursive tree with `parent[query] = label_utt` and no distractor
/// on the path from `label_utt` to the root.
fn sample_tree(n: usize, query: usize, label_utt: usize, distractors: &[usize], rng: &mut impl Rng) -> DependencyTree {
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for _ in 0..TREE_ATTEMPTS {
        for (i, p) in parent.iter_mut().enumerate().skip(1) {
            *p = Some(if i == query { label_utt } else { rng.random_range(0..i) });
        }
        let tree = DependencyTree::from_parents(parent.clone()).expect("parents precede children");
        if !tree.ancestors(label_utt).any(|a| distractors.contains(&a)) {
            return tree;
        }
    }
    // hang the label utterance straight off the root
    parent[label_utt] = Some(0);
    DependencyTree::from_parents(parent).expect("parents precede children")
}

/// Rule-based solver that follows the query's dependency edge. Returns
/// `None` when the conversation does not have the task's shape.
pub fn tree_oracle(conv: &Conversation, vocab: &Vocab, classes: usize) -> Option<usize> {
    let cue = vocab.id(CUE_WORD);
    let query = conv.utterances.iter().position(|u| u.tokens.contains(&cue))?;
    let target = conv.tree.parent(query)?;
    answers_in(&conv.utterances[target].tokens, vocab, classes).next()
}

/// Answer classes present anywhere in the token sequence, in order.
pub fn candidate_answers(conv: &Conversation, vocab: &Vocab, classes: usize) -> Vec<usize> {
    answers_in(&conv.tokens, vocab, classes).collect()
}

fn answers_in<'a>(tokens: &'a [u32], vocab: &'a Vocab, classes: usize) -> impl Iterator<Item = usize> + 'a {
    let first = vocab.id(&TaskConfig::answer_word(0));
    tokens
        .iter()
        .filter(move |&&t| t >= first && ((t - first) as usize) < classes)
        .map(move |&t| (t - first) as usize)
}

/// Solver that ignores the tree and guesses among the answers present.
pub fn token_only_guess(conv: &Conversation, vocab: &Vocab, classes: usize, rng: &mut impl Rng) -> Option<usize> {
    candidate_answers(conv, vocab, classes).choose(rng).copied()
}

#[derive(Debug, Serialize, Deserialize)]
struct LabeledRecord {
    #[serde(flatten)]
    conversation: ConversationRecord,
    label: usize,
}

/// Writes `task.json`, `vocab.json` and one JSON-lines file per split.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("task.json"), to_pretty(&dataset.config))?;
    std::fs::write(dir.join("vocab.json"), to_pretty(&dataset.vocab))?;
    for split in Split::ALL {
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{}.jsonl", split.name())))?);
        for ex in dataset.split(split) {
            let rec = LabeledRecord {
                conversation: ex.conversation.to_record(),
                label: ex.label,
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let read_json = |name: &str| -> Result<Vec<u8>> {
        std::fs::read(dir.join(name)).map_err(|e| Error::validation(format!("{}: {e}", dir.join(name).display())))
    };
    let config_bytes = read_json("task.json")?;
    let config: TaskConfig =
        serde_json::from_slice(&config_bytes).map_err(|e| crate::conversation::json_error(&config_bytes, &e))?;
    let vocab_bytes = read_json("vocab.json")?;
    let vocab: Vocab =
        serde_json::from_slice(&vocab_bytes).map_err(|e| crate::conversation::json_error(&vocab_bytes, &e))?;
    let tokenizer = Tokenizer::new(vocab.clone(), true);
    let mut splits = Vec::new();
    for split in Split::ALL {
        let path = dir.join(format!("{}.jsonl", split.name()));
        let file = std::fs::File::open(&path).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        let mut examples = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LabeledRecord =
                serde_json::from_str(&line).map_err(|e| {
                    match crate::conversation::json_error(line.as_bytes(), &e) {
                        Error::Parse { offset, message } => Error::Parse {
                            offset,
                            message: format!("{} line {}: {message}", path.display(), lineno + 1),
                        },
                        other => other,
                    }
                })?;
            if rec.label >= config.classes {
                return Err(Error::validation(format!(
                    "{} line {}: label {} outside {} classes",
                    path.display(),
                    lineno + 1,
                    rec.label,
                    config.classes
                )));
            }
            examples.push(Example {
                conversation: rec.conversation.into_conversation(&tokenizer)?,
                label: rec.label,
            });
        }
        splits.push(examples);
    }
    let test = splits.pop().unwrap();
    let dev = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        config,
        vocab,
        train,
        dev,
        test,
    })
}

fn to_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("serializable")
}
