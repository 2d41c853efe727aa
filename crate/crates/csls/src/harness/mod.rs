//! Desk-scale distillation simulator: synthetic long-tail data, a linear
//! softmax classifier trained by full-batch gradient descent, and the
//! ablation runner that compares label-construction strategies.

pub mod ablation;
pub mod model;
pub mod synth;
