//! Latent-space adversarial text generation.
//!
//! A sequence VAE maps sentences to a continuous latent space, a WGAN-GP
//! learns to sample that space, and the decoder's output layer is then
//! finetuned with an entropy-regularized policy gradient whose per-token
//! rewards come from a value head trained to decompose a sentence-level BLEU
//! reward.
//!
//! Modules, bottom-up:
//!
//! - [`diffcore`]: matrices, reverse-mode gradients (including the
//!   second-order path of the gradient penalty), feedforward stacks and
//!   optimizers.
//! - [`corpus`]: tokenization, vocabularies and splits.
//! - [`seqvae`]: the recurrent sequence VAE.
//! - [`latentgan`]: WGAN-GP over latent vectors with standard and adaptive
//!   update scheduling.
//! - [`rlfinetune`]: value head, intrinsic entropy reward and the policy
//!   gradient step.
//! - [`evalmetrics`]: BLEU / Backwards-BLEU, Fréchet distance, PCA and
//!   length diagnostics.
//! - [`checkpoint`]: the `LTG1` binary container.

pub mod checkpoint;
pub mod corpus;
pub mod diffcore;
pub mod evalmetrics;
pub mod latentgan;
pub mod rlfinetune;
pub mod seqvae;
pub mod util;
