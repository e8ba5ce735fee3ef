//! Zero-shot classification with an absorbing Markov chain over a k-NN
//! semantic graph of class embeddings.
//!
//! Seen classes are transient states and unseen classes absorbing states.
//! A test image enters the chain through its top-K seen-class posteriors and
//! is labelled with the unseen class that most likely absorbs the walk.
//!
//! ```
//! use zsl_amp::{graph, chain};
//! use nalgebra::dmatrix;
//!
//! let g = graph::SemanticGraph::from_edges(
//!     vec!["y1".into(), "y2".into()],
//!     vec!["z1".into(), "z2".into()],
//!     [
//!         ("y1".into(), "y2".into(), 1.0),
//!         ("y1".into(), "z1".into(), 1.0),
//!         ("y2".into(), "z2".into(), 1.0),
//!     ],
//! )?;
//! let ts = graph::transition_system(&g)?;
//! let b = chain::absorbing_probabilities(&ts)?;
//! assert!((b[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
//! # Ok::<(), zsl_amp::Error>(())
//! ```

pub mod baselines;
pub mod bench;
pub mod chain;
pub mod classify;
pub mod data;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod json;

pub use error::{Error, Result};
