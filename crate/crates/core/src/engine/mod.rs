//! Dense forward/backward engine for the layer kinds the search space needs.

mod loss;
mod network;
mod ops;
mod optim;
pub(crate) mod scalar;
mod tensor;

pub use loss::{argmax, softmax_cross_entropy, CrossEntropy};
pub use network::{
    Block, BlockKind, BnMode, BnStats, GradRequest, Grads, Layer, Layout, Network, NetworkBuilder, Node, Pass,
};
pub use ops::BN_EPS;
pub use optim::{cosine_lr, sgd_step, SgdConfig};
pub use scalar::Scalar;
pub use tensor::{ParamGroup, ParamKind, Tensor};
