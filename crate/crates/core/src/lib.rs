//! Joint addressee and response selection for multi-party chat.
//!
//! Given a dialog context and a responding speaker, the task is to pick
//! who the next message is for and which candidate utterance it is.
//! This crate provides:
//!
//! - [`numkit`]: dense-array math with reverse-mode differentiation and
//!   a finite-difference gradient checker,
//! - [`corpus`]: chat-log parsing, sample creation, vocabulary and
//!   frozen word vectors,
//! - [`encoders`]: the word-level GRU utterance encoder and two dialog
//!   encoders (role-sensitive interaction units vs. sender-only updates),
//! - [`selector`]: the probability heads, joint and separate selection,
//!   and the training loss,
//! - [`baselines`]: chance and tf-idf reference systems,
//! - [`trainer`]: Adam with L2 decay, mini-batching, early stopping and
//!   checkpointing,
//! - [`evalkit`]: metrics, binned analyses, and synthetic dialog
//!   generation for property-based verification.

pub mod baselines;
pub mod corpus;
pub mod encoders;
pub mod evalkit;
pub mod numkit;
pub mod selector;
pub mod trainer;

pub use corpus::{DialogContext, LogLine, SelectionSample, Vocab};
pub use evalkit::{EvalReport, SynthSpec};
pub use numkit::{ParameterStore, Real, Tensor};
pub use selector::ScoredPair;
pub use trainer::{ModelKind, TrainConfig};
