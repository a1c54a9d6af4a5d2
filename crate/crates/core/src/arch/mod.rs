//! Architecture descriptions: filters, pyramidal convolutions, blocks,
//! whole students, and the candidate space they are searched from.

mod space;
mod spec;

pub use space::{derive_architecture, BlockCandidates, CandidateSpace, Choice, MixWeights};
pub use spec::{ArchitectureSpec, BlockSpec, Dims, FilterSpec, Pooling, PyConvSpec, NUM_BLOCKS};
