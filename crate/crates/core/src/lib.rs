//! Sparse dictionary models for finding and describing the features a
//! plausibility classifier relies on.
//!
//! The modules follow the pipeline: [`store`] reads and writes activation
//! datasets, [`classifier`] trains the two-layer head, [`dict`] and
//! [`trainer`] define and fit the dictionaries, [`analysis`] turns a scan of
//! the corpus into relevance metrics, and [`interpret`] asks a multimodal
//! model to describe each latent. [`synth`] builds planted worlds with known
//! answers for testing all of the above.
//!
//! ```
//! use featscope::dict::{DictKind, DictModel, DictSpec};
//!
//! let spec = DictSpec::new(DictKind::MatryoshkaSae, 8, 8, vec![4, 16], vec![2, 4])?;
//! let model = DictModel::init(spec, 42)?;
//! let code = model.sparse_code(&[0.5; 8], 1)?;
//! assert!(code.len() <= 4);
//! # Ok::<(), featscope::Error>(())
//! ```

pub mod analysis;
pub mod classifier;
pub mod dict;
pub mod error;
pub mod interpret;
pub mod optim;
pub mod rng;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
