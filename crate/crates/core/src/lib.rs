pub mod aligner;
pub mod corpus_io;
pub mod downstream;
pub mod error;
pub mod inference;
pub mod numeric;
pub mod pooler;
pub mod report;
pub mod segmenter;
pub mod simcorr;
pub mod synth;

pub use error::{Error, Result};
