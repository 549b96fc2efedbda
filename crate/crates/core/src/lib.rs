//! Frozen-classifier transfer learning on pre-extracted video embeddings.
//!
//! A video is a `T × d` sequence of frame embeddings produced by an external
//! encoder. A trainable temporal head pools it into one `d`-dim embedding,
//! and a `c × d` projection matrix turns that into class logits. The
//! projection can be frozen at one of several initializations (random,
//! orthogonal, LDA, text embeddings of the class names) or learned jointly.

pub mod analysis;
pub mod classifier;
pub mod datastore;
pub mod error;
pub mod headnet;
pub mod numkit;
pub mod objectives;
pub mod protocols;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
