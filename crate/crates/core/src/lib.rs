//! Train small fully-connected classifiers and invert them: given a
//! prescribed output class distribution, synthesize input images the
//! network maps to it.
//!
//! Two inversion engines are provided. The forward-pass engine treats
//! inversion as root finding on the network output and runs damped
//! Gauss-Newton (Levenberg-Marquardt) steps using the analytic input
//! Jacobian; it works for any differentiable network. The backward-pass
//! engine inverts a softmax classifier layer by layer — softmax inverse,
//! activation inverse, condition-capped pseudoinverse — and samples the
//! null space of each linear layer to produce families of distinct
//! preimages. Prior-art baselines (dataset search, percentile averaging,
//! gradient-trained inputs) are included for comparison, along with MNIST
//! IDX ingestion, PGM export, and model persistence.

pub mod baselines;
pub mod cli;
pub mod dataio;
pub mod inversion;
pub mod linalg;
pub mod network;
pub mod report;
pub mod training;

pub use cli::run;
