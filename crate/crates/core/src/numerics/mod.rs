//! Dense tensors, the reverse-mode tape, the optimizer, and seeded
//! randomness. Everything above this module computes through `Var`
//! handles on a `Tape` and trains with `Adam`.

pub mod check;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
