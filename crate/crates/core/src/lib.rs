//! Core algorithms for domain-adaptive continual pretraining of a
//! transformer encoder.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! the filesystem, the command line or serialized file formats lives in the
//! companion `dapt` crate.
//!
//! The pipeline implemented here:
//!
//! 1. [`corpus`]: normalize text, split it into bounded chunks, count words.
//! 2. [`tokenizer`]: train a byte-level BPE vocabulary on the domain corpus,
//!    partition it against a pretrained vocabulary into mutual and distinct
//!    tokens, and build a tokenizer that keeps the pretrained id of every
//!    mutual token.
//! 3. [`embedding`]: transplant pretrained embedding rows, perturb the mutual
//!    rows with multiplicative Gaussian noise and Xavier-initialize the rest.
//! 4. [`model`]: a post-norm bidirectional encoder with masked-LM, sequence
//!    and token classification heads, and exact reverse-mode gradients.
//! 5. [`pretrain`]: dynamic masking, AdamW with warmup/decay, the MLM loop
//!    and the four ablation wirings.
//! 6. [`eval`]: top-N masked word hit rate, sentiment and NER fine-tuning
//!    with their metrics.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod corpus;
pub mod embedding;
mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod rng;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use tensor::Matrix;
