//! Pre-training and dual-prompt tuning for continuous-time dynamic graphs.
//!
//! A temporal-attention encoder with a learnable sinusoidal time encoder is
//! pre-trained on temporal link prediction. Downstream few-shot tasks (node
//! classification, link prediction) are then solved by tuning only a node
//! prompt, a time prompt, and two bottleneck condition-nets that generate
//! time-conditioned node prompts and node-conditioned time prompts, with the
//! backbone frozen.
//!
//! Module map:
//! - [`eventstore`]: event streams, JODIE CSV ingestion, chronological splits,
//!   temporal neighbor index, negative and task sampling
//! - [`diffcore`]: reverse-mode autodiff, Adam, gradient checking
//! - [`encoder`]: time encoder, temporal attention backbone, checkpoints
//! - [`pretrain`]: contrastive link-prediction pre-training
//! - [`prompts`]: dual prompts, condition-nets, prototypes, prompt tuning
//! - [`evalbench`]: AUC, task runners, ablations, synthetic data, reports
//! - [`cli`]: config files and the `synth` / `pretrain` / `tune-eval` / `ablate` commands

pub mod cli;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod evalbench;
pub mod eventstore;
pub mod pretrain;
pub mod prompts;

pub use error::{Error, Result};
