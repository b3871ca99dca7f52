//! Relative dependency encoding for transformer self-attention over
//! multi-party conversations.
//!
//! Utterances are linked by a dependency tree; the signed, clipped tree
//! distance between the utterances owning two tokens selects a learned
//! embedding whose projection biases their attention score.

pub mod attention;
pub mod checkpoint;
pub mod conversation;
pub mod distance;
pub mod encoder;
pub mod error;
pub mod init;
pub mod task;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod train;

pub use attention::{AttentionParams, Mechanism, PairBias};
pub use conversation::{chain_parse, load_conversation, Conversation, DependencyTree, Tokenizer, Utterance, Vocab};
pub use distance::{
    clip, rel_distance, token_bucket_matrix, utterance_distance_matrix, BucketGrid, BucketMap, DistanceMatrix,
    RelDistance,
};
pub use encoder::{encoder_forward, EncoderInput, EncoderModel, ModelConfig, ParamGroup};
pub use error::{Error, Result};
