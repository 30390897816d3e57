//! Data augmentation and training objectives for end-to-end speech translation.
//!
//! A corpus is a list of speech/transcription/translation [`Triple`]s. Three
//! mixers produce augmented data from it:
//!
//! - word level: splice a noun's frames, source token and aligned target
//!   tokens with those of a similar word taken from another utterance;
//! - sentence level: concatenate two utterances from different speakers;
//! - frame level: convexly combine two frame sequences with weight `lambda`
//!   (every pair is also emitted with weight `1 - lambda`) and train against
//!   both targets.
//!
//! [`objectives`] holds the losses (cross-entropy, mixed cross-entropy,
//! token-level Jensen-Shannon divergence) with analytic logit gradients, and
//! [`toymodel`] a small two-pathway encoder-decoder that runs the two-stage
//! fine-tuning schedule end to end.

pub mod alignio;
pub mod corpus;
pub mod mixers;
pub mod neighbors;
pub mod numfmt;
pub mod objectives;
pub mod rng;
pub mod synth;
pub mod toymodel;

pub use alignio::{EmbeddingTable, WordAlignment};
pub use corpus::{Corpus, FrameSeq, Triple, Violation};
pub use mixers::{FrameMixedExample, MixConfig, WordInventory, WordMix};
pub use neighbors::NeighborTable;
pub use objectives::LogitSeq;
pub use toymodel::{Checkpoint, History, MixLayer, ToyParams, TrainConfig};
