//! Numerical laboratory for the law of robustness under Bregman losses.
//!
//! The crate implements the four Bregman loss families, a mixture-of-Gaussians
//! data model with closed-form conditional means, small ReLU networks with
//! certified Lipschitz and parameterization constants, the bias-variance
//! decomposition of the excess empirical loss, Monte-Carlo tail checks for
//! each concentration statement used in the lower-bound argument, and the
//! bound formulas themselves.

pub mod bounds;
pub mod bregman;
pub mod concentration;
pub mod decomposition;
pub mod discrete;
pub mod error;
pub mod function_class;
pub mod linalg;
pub mod rng;
pub mod sampler;
pub mod trace;

pub use bounds::{BoundInputs, BoundReport, CorollaryInputs};
pub use bregman::{loss_constants, DomainSpec, LossConfig, LossConstants, LossKind, LossSpec, Region};
pub use concentration::{StatementId, TailReport};
pub use decomposition::{DecompositionRecord, MeanGrad, MixtureTermsRecord};
pub use discrete::DiscreteModel;
pub use error::{Error, Result};
pub use function_class::{FunctionClass, Head, Network};
pub use sampler::{DataModel, LabelLaw, Sample};
