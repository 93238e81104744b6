//! Differentiable operations, implemented as methods on [`Graph`](crate::Graph).

mod attention;
mod conv;
mod elementwise;
mod loss;
mod norm;
mod rnn;
mod shape;

pub use conv::ConvSpec;
pub use rnn::GruVars;
