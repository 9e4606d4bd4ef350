//! Domain certification for sequence models by rejection sampling.
//!
//! A general model `L` proposes responses; a guide model `G` trained only on
//! the target domain scores them. A response `y` is kept when the
//! length-normalized log ratio `(log2 L(y|x) - log2 G(y)) / N_y` is at most
//! `k` bits, with up to `T` proposals before abstaining. The resulting model
//! emits any `y` with probability at most `2^(k N_y) T G(y)` whatever the
//! prompt, which is the atomic certificate computed in [`certificates`].
//!
//! Modules:
//! - [`model`]: the sequence-model contract, n-gram, tabular and helper models
//! - [`chartask`]: the CharTask synthetic domain and its validity checker
//! - [`valid`]: the rejection-sampling loop and batch scoring
//! - [`certificates`]: atomic/domain certificates, k-for-ε, constriction ratios
//! - [`analysis`]: exact likelihood of the meta-model, Monte Carlo estimates,
//!   rejection-rate sweeps and eCDFs
//! - [`adversary`]: exhaustive prompt search against the certificate

pub mod adversary;
pub mod analysis;
pub mod certificates;
pub mod chartask;
pub mod error;
pub mod exec;
pub mod model;
pub mod valid;

pub use error::{Error, ErrorKind, Result};
pub use model::{LogProb, Sequence, SequenceModel, TokenId, Vocabulary};
