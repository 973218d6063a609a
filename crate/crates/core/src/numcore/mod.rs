//! Numerical substrate: dense algebra, MLP encoders with explicit
//! backpropagation, momentum SGD, EMA averaging and checkpoints.

mod checkpoint;
mod linalg;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, NetworkRecord, CHECKPOINT_MAGIC};
pub use linalg::{
    argmax, axpy, dot, l2_normalize, l2_normalize_backward, norm, softmax, squared_distance, Matrix,
};
pub use mlp::{Activation, LayerShape, Mlp, Tape};
pub use optim::{ema_update, Sgd};
