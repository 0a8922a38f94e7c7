//! Markov jump processes on truncated ultrametric spaces.
//!
//! The state space is the leaf set of a finite multibranching tree (the
//! p-adic rings are the uniform special case). Every level of the tree
//! partitions the leaves into balls, and each partition carries an averaged
//! jump kernel, an averaged Dirichlet form and a continuous-time Markov chain.
//!
//! Module map:
//!
//! - [`space`]: tree construction, addresses, metric, measure, projections.
//! - [`kernel`]: leaf jump kernels, ball averaging, ball-wise constancy and
//!   integrability certificates.
//! - [`forms`]: level functions, extension/restriction operators, energies.
//! - [`markov`]: generators, semigroups, resolvents, lumpability, tightness.
//! - [`sim`]: exact path sampling, path projection, ensemble comparison.
//! - [`exact`]: rational-arithmetic versions of the operator identities.
//! - [`presets`]: the shipped desk-scale configurations.

pub mod error;
pub mod exact;
pub mod forms;
pub mod kernel;
pub mod markov;
pub mod presets;
pub mod sim;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
pub use forms::LevelFunction;
pub use kernel::{AveragedKernel, JumpKernel, KernelConfig, LambdaProfile, RateMatrix};
pub use markov::{GeneratorMatrix, Hierarchy};
pub use space::{BallAddress, QuotientLevel, SpaceConfig, TreeSpace};
