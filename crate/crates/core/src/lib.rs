//! Global hierarchical text classification.
//!
//! The output layer is a hierarchical softmax over a class taxonomy: every
//! parent node owns a small softmax over its children, and the probability of
//! a leaf class is the product of the conditionals along its root-to-leaf
//! path. Training minimises the cross entropy of that product, so a single
//! gradient step updates every parent on the correct path and the hidden
//! state receives feedback from all of them at once.
//!
//! Module map:
//!
//! - [`taxonomy`]: the class tree, path and fan-out queries, flat view.
//! - [`hsoftmax`]: forward probabilities, loss, analytic gradients, gradient check.
//! - [`encoder`]: mean-pool and (Bi)LSTM encoders with backpropagation through time.
//! - [`optim`]: Adam, mini-batch training with early stopping, k-fold cross-validation.
//! - [`metrics`]: confusion matrix and macro/micro metrics.
//! - [`data`]: corpus, taxonomy and embedding loaders, synthetic corpus generator.
//! - [`checkpoint`]: bit-exact parameter containers.
//! - [`cli`]: the `hsm` command-line driver.
//!
//! The guide under `book/` walks through the same material with runnable
//! snippets; its chapters are compiled as doc-tests of this crate.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod hsoftmax;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod taxonomy;

pub use hsoftmax::{HierSoftmaxParams, PathGradients};
pub use matrix::Matrix;
pub use taxonomy::{NodeId, TaxonomyTree};

// Every book chapter is a doc-test target so the snippets cannot drift.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/taxonomy.md")]
    mod taxonomy {}
    #[doc = include_str!("../../../book/src/hierarchical-softmax.md")]
    mod hierarchical_softmax {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
