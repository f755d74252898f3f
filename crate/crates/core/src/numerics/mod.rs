//! Deterministic f64 kernel: small ReLU networks with reverse mode, softmax
//! and cross-entropy, Gumbel-Softmax sampling, and momentum SGD.

mod gradcheck;
mod mlp;
mod ops;
mod optim;
mod rng;

pub use gradcheck::{finite_difference_check, relative_error, FdReport, FD_STEP, REL_ERROR_FLOOR};
pub use mlp::{affine_forward, Checkpoint, Dense, ForwardTrace, Matrix, Mlp, MlpGrads};
pub use ops::{
    argmax, cross_entropy, cross_entropy_index, gumbel_softmax_sample, gumbel_softmax_with_noise,
    one_hot, soft_cross_entropy, softmax, softmax_backward, GumbelSample, PROB_FLOOR,
};
pub use optim::Sgd;
pub use rng::{derive_seed, Rng};
