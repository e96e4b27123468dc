//! Sentence embeddings from frozen transformer encoders, weighted by the
//! diagonal of an attention head ("Ditto"), plus the evaluation tooling around
//! them: STS benchmarks, perturbed-masking probes, TF-IDF baselines and
//! embedding-space diagnostics.

pub mod container;
pub mod encoder;
pub mod error;
pub mod export;
pub mod metrics;
pub mod model_io;
pub mod pooling;
pub mod probe;
pub mod sts;
pub mod tensor;
pub mod tfidf;
pub mod tokenizer;

#[cfg(test)]
pub(crate) mod testing;

pub use encoder::{diagonal_attention, Encoder, EncoderOutput, HeadRef};
pub use error::{Error, Result};
pub use model_io::{EncoderConfig, Model, ModelWeights};
pub use pooling::{embed_corpus, pool, EmbedOptions, PoolingSpec, Strategy};
pub use tensor::Tensor;
pub use tfidf::TfidfModel;
pub use tokenizer::{TokenizedSentence, Vocab};
