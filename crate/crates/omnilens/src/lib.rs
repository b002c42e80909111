//! Omnilens: one model, one checkpoint, many tasks.
//!
//! A desk-scale vision-language system in which classification, detection,
//! segmentation and their referring variants are all served by a single
//! network. Tasks differ only in which input queues (text, general) and
//! output paths (semantic tokens, pixel masks) a declarative [`tasks::TaskSpec`]
//! switches on; annotations of every kind travel through one discrete token
//! space defined by [`codec::UnifiedVocabulary`].
//!
//! The crate is organized around the data flow:
//!
//! * [`codec`] — annotations to and from unified token sequences
//! * [`model`] — visual/text encoders and the shared two-output decoder
//! * [`tasks`] — task compositions and inference
//! * [`train`] — set-matching losses, contrastive objectives, the optimizer
//! * [`data`] — deterministic synthetic scenes with heterogeneous labels
//! * [`eval`] — mAP / mAcc / Dice and evaluation protocols
//! * [`runcfg`] — flat key=value run configuration shared by the CLI
//!
//! ```
//! use omnilens::codec::{build_vocabulary, quantize_coord, dequantize_coord};
//!
//! let vocab = build_vocabulary(&["polyp".into(), "adenoma".into()], 1000).unwrap();
//! assert_eq!(vocab.coord_len(), 1000);
//! let bin = quantize_coord(512.0, 1024.0, 1000).unwrap();
//! assert_eq!(bin, 500);
//! let back = dequantize_coord(bin, 1024.0, 1000).unwrap();
//! assert!((back - 512.512).abs() < 1e-9);
//! ```

pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod runcfg;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
