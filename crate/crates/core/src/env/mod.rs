//! Environments implementing the [`Environment`](crate::lmdp::Environment) contract.

pub mod maze;
pub mod ngram;
pub mod tabular;

pub use maze::{maze_latent, MazeConfig, MazeEnv};
pub use ngram::{generate_ngram, NgramMdpSpec};
pub use tabular::{generate_injective, generate_tabular, MixtureWeights, TabularLatentMdp};
