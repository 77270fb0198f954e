//! Desk-scale laboratory for creating, training, and analyzing ensembles of
//! small neural-network classifiers: diversity metrics over predictions,
//! attributions, and representations; diversity-enforcing losses; consensus
//! mechanisms; synthetic image corruptions; and a probabilistic model of
//! design diversity.

pub mod attribution;
pub mod autodiff;
pub mod checkpoint;
pub mod consensus;
pub mod corrupt;
pub mod data;
pub mod error;
pub mod lm;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
