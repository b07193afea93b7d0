//! Tape-based reverse-mode automatic differentiation over `f64` tensors.
//!
//! Built for CPU-trained audio models: the op set covers strided and dilated
//! 2-D convolutions, transposed convolutions, LSTMs, channel normalization,
//! masked softmax attention primitives, and the usual elementwise and
//! reduction ops. Graphs are constructed per forward pass; parameters live
//! in a [`nn::ParamStore`] and attach as shared leaves. Everything is `f64`
//! and single-threaded, so runs are bit-reproducible for a fixed seed.
//!
//! Custom ops can be registered through [`graph::Graph::custom`], which is
//! how the signal-processing layers (STFT and friends) plug in their exact
//! adjoints.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod nn;
pub mod norm;

pub use adam::Adam;
pub use conv::{Conv2dGeom, ConvT2dGeom};
pub use graph::{BackwardFn, Gradients, Graph, Value, VarId};
pub use nn::{Binding, ChannelNorm, Conv2d, ConvT2d, GradBuffer, Linear, Lstm, ParamId, ParamStore};
