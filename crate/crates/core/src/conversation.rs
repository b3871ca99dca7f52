//! Multi-party conversation data model: utterances, the utterance dependency
//! tree produced by a discourse parser, and the flat token sequence with its
//! token-to-utterance map.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const CLS_TOKEN: &str = "<cls>";

/// Word-level vocabulary. Ids 0, 1 and 2 are always `<pad>`, `<unk>`, `<cls>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;

    /// Builds a vocabulary from whitespace-separated words, in first-seen order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self::from_words(Vec::new());
        for text in texts {
            for word in text.split_whitespace() {
                vocab.insert(word);
            }
        }
        vocab
    }

    fn from_words(words: Vec<String>) -> Self {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for special in [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN] {
            vocab.insert(special);
        }
        for w in &words {
            vocab.insert(w);
        }
        vocab
    }

    fn insert(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Vocab::from_words(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Whitespace tokenizer over a fixed vocabulary, optionally prepending `<cls>`.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub vocab: Vocab,
    pub cls_prefix: bool,
}

impl Tokenizer {
    pub fn new(vocab: Vocab, cls_prefix: bool) -> Self {
        Tokenizer { vocab, cls_prefix }
    }

    pub fn prefix_len(&self) -> usize {
        usize::from(self.cls_prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub index: usize,
    pub speaker: String,
    pub text: String,
    pub tokens: Vec<u32>,
}

/// Utterance dependency tree. `parent(0)` is `None`; every other utterance
/// points at exactly one strictly earlier utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DependencyTree {
    parent: Vec<Option<usize>>,
}

impl DependencyTree {
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        if parent.is_empty() {
            return Err(Error::validation("dependency tree has no utterances"));
        }
        if let Some(p) = parent[0] {
            return Err(Error::validation(format!(
                "utterance 0 is the root and cannot depend on utterance {p}"
            )));
        }
        for (i, p) in parent.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::validation(format!("utterance {i} has no dependency"))),
                Some(p) if *p >= i => {
                    return Err(Error::validation(format!(
                        "edge {{from: {i}, to: {p}}}: edge targets non-preceding utterance"
                    )))
                }
                _ => {}
            }
        }
        let tree = DependencyTree { parent };
        debug_assert!((0..tree.len()).all(|i| tree.ancestors(i).last() == Some(0) || i == 0));
        Ok(tree)
    }

    /// Fallback parse used when no parser output is supplied: every utterance
    /// depends on its predecessor.
    pub fn chain(utterance_count: usize) -> Self {
        assert!(utterance_count >= 1, "chain_parse needs at least one utterance");
        let parent = (0..utterance_count)
            .map(|i| if i == 0 { None } else { Some(i - 1) })
            .collect();
        DependencyTree { parent }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Proper ancestors of `i`, nearest first, ending at the root.
    pub fn ancestors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.parent[i], move |&p| self.parent[p])
    }

    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.len()];
        for i in 1..self.len() {
            // parents precede children, so depth[p] is already final
            depth[i] = depth[self.parent[i].unwrap()] + 1;
        }
        depth
    }

    /// Dependency edges `(from, to)` with `from > to`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p)))
    }
}

pub fn chain_parse(utterance_count: usize) -> DependencyTree {
    DependencyTree::chain(utterance_count)
}

/// A tokenized conversation with its dependency tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub utterances: Vec<Utterance>,
    pub tree: DependencyTree,
    /// Flat token ids, including any prefix tokens and trailing padding.
    pub tokens: Vec<u32>,
    /// Utterance owning each flat position; `None` marks padding.
    pub token_to_utt: Vec<Option<usize>>,
    pub prefix_len: usize,
}

impl Conversation {
    pub fn new(utterances: Vec<Utterance>, tree: DependencyTree, tokenizer: &Tokenizer) -> Result<Self> {
        if utterances.len() != tree.len() {
            return Err(Error::validation(format!(
                "{} utterances but dependency tree covers {}",
                utterances.len(),
                tree.len()
            )));
        }
        for (i, u) in utterances.iter().enumerate() {
            if u.index != i {
                return Err(Error::validation(format!(
                    "utterance at position {i} carries index {}",
                    u.index
                )));
            }
            if u.tokens.is_empty() {
                return Err(Error::validation(format!("utterance {i} has no tokens")));
            }
        }
        let (tokens, token_to_utt) = flatten(&utterances, tokenizer)?;
        Ok(Conversation {
            utterances,
            tree,
            tokens,
            token_to_utt,
            prefix_len: tokenizer.prefix_len(),
        })
    }

    /// Builds a conversation from raw `(speaker, text)` pairs.
    pub fn from_texts<S: AsRef<str>, T: AsRef<str>>(
        turns: &[(S, T)],
        tree: DependencyTree,
        tokenizer: &Tokenizer,
    ) -> Result<Self> {
        let utterances = turns
            .iter()
            .enumerate()
            .map(|(index, (speaker, text))| Utterance {
                index,
                speaker: speaker.as_ref().to_string(),
                text: text.as_ref().to_string(),
                tokens: tokenizer.vocab.tokenize(text.as_ref()),
            })
            .collect();
        Conversation::new(utterances, tree, tokenizer)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.utterances.len()
    }

    /// Appends `<pad>` positions up to `len` total positions.
    pub fn pad_to(&mut self, len: usize) -> Result<()> {
        if len < self.len() {
            return Err(Error::shape(format!(
                "cannot pad a {}-token sequence to {len}",
                self.len()
            )));
        }
        self.tokens.resize(len, Vocab::PAD);
        self.token_to_utt.resize(len, None);
        Ok(())
    }

    pub fn to_record(&self) -> ConversationRecord {
        ConversationRecord {
            utterances: self
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    speaker: u.speaker.clone(),
                    text: u.text.clone(),
                })
                .collect(),
            dependencies: Some(
                self.tree
                    .edges()
                    .map(|(from, to)| DependencyEdge { from, to })
                    .collect(),
            ),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("conversation serializes")
    }
}

/// Concatenates utterance tokens, mapping each position to its utterance.
/// Prefix tokens are attributed to utterance 0.
pub fn flatten(utterances: &[Utterance], tokenizer: &Tokenizer) -> Result<(Vec<u32>, Vec<Option<usize>>)> {
    if utterances.is_empty() {
        return Err(Error::validation("conversation has no utterances"));
    }
    let total = tokenizer.prefix_len() + utterances.iter().map(|u| u.tokens.len()).sum::<usize>();
    let mut tokens = Vec::with_capacity(total);
    let mut owner = Vec::with_capacity(total);
    if tokenizer.cls_prefix {
        tokens.push(Vocab::CLS);
        owner.push(Some(0));
    }
    for (i, u) in utterances.iter().enumerate() {
        tokens.extend_from_slice(&u.tokens);
        owner.extend(std::iter::repeat_n(Some(i), u.tokens.len()));
    }
    Ok((tokens, owner))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub from: usize,
    pub to: usize,
}

/// On-disk conversation layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub utterances: Vec<UtteranceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependencies: Option<Vec<DependencyEdge>>,
}

impl ConversationRecord {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.text.as_str())
    }

    /// Validates the dependency edges and assembles the tree. Missing
    /// dependencies fall back to [`chain_parse`].
    pub fn tree(&self) -> Result<DependencyTree> {
        let n = self.utterances.len();
        if n == 0 {
            return Err(Error::validation("conversation has no utterances"));
        }
        let Some(edges) = &self.dependencies else {
            log::warn!("no dependencies supplied; falling back to chain parse over {n} utterances");
            return Ok(chain_parse(n));
        };
        let mut parent = vec![None; n];
        for e in edges {
            let DependencyEdge { from, to } = *e;
            if from == to {
                return Err(Error::validation(format!("edge {{from: {from}, to: {to}}}: self-loop")));
            }
            if from < to {
                return Err(Error::validation(format!(
                    "edge {{from: {from}, to: {to}}}: edge targets non-preceding utterance"
                )));
            }
            if from >= n {
                return Err(Error::validation(format!(
                    "edge {{from: {from}, to: {to}}}: utterance {from} does not exist ({n} utterances)"
                )));
            }
            if parent[from].is_some() {
                return Err(Error::validation(format!(
                    "edge {{from: {from}, to: {to}}}: duplicate dependency for utterance {from}"
                )));
            }
            parent[from] = Some(to);
        }
        DependencyTree::from_parents(parent)
    }

    pub fn into_conversation(self, tokenizer: &Tokenizer) -> Result<Conversation> {
        let tree = self.tree()?;
        let turns: Vec<(String, String)> = self.utterances.into_iter().map(|u| (u.speaker, u.text)).collect();
        Conversation::from_texts(&turns, tree, tokenizer)
    }
}

/// Parses conversation JSON, reporting the byte offset of syntax errors.
pub fn parse_record(source: &[u8]) -> Result<ConversationRecord> {
    serde_json::from_slice(source).map_err(|e| json_error(source, &e))
}

pub fn load_conversation(source: &[u8], tokenizer: &Tokenizer) -> Result<Conversation> {
    parse_record(source)?.into_conversation(tokenizer)
}

/// Converts serde's line/column into a byte offset into `source`.
pub(crate) fn json_error(source: &[u8], e: &serde_json::Error) -> Error {
    let (line, column) = (e.line(), e.column());
    let offset = if line == 0 {
        0
    } else {
        let line_start: usize = source.split(|&b| b == b'\n').take(line - 1).map(|l| l.len() + 1).sum();
        (line_start + column.saturating_sub(1)).min(source.len())
    };
    Error::Parse {
        offset,
        message: e.to_string(),
    }
}
