//! Experience-notebook harness for black-box LLMs.
//!
//! During training the model answers each case, is shown the ground truth,
//! and reflects by issuing `NOTE[key]: value` commands that land in an
//! external [`memory::MemoryStore`]. During testing the harness recalls up to
//! `k` experiences whose keys share words with the question and embeds them in
//! the prompt.
//!
//! Modules:
//!
//! - [`memory`]: experience store, word-overlap retriever, JSON-lines persistence
//! - [`protocol`]: THINK / NOTE / RECALL / ANSWER grammar, prompt bundles, feedback, judging
//! - [`agent`]: training and testing episodes, variants, experiment runner
//! - [`backends`]: live chat-completion client, scripted backend, record/replay cassette
//! - [`datasets`]: task files, seeded split, LETS letter-splicing generator
//! - [`evaluation`]: accuracy, improvement buckets, efficiency, training curves
//! - [`cli`]: the `expnote` command line

pub mod agent;
pub mod backends;
pub mod cli;
pub mod datasets;
pub mod evaluation;
pub mod memory;
pub mod protocol;

pub use agent::{
    run_experiment, run_test_episode, run_train_episode, Trajectory, Variant, VariantConfig,
};
pub use backends::{Backend, BackendError, ChatRequest, Message};
pub use datasets::TaskInstance;
pub use evaluation::{BucketCounts, RunReport};
pub use memory::{Experience, MemoryStore, Polarity};
pub use protocol::{Command, PromptBundle};
