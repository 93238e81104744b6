pub mod config;
pub mod corpus;
pub mod evaluate;
pub mod extract;
pub mod selftest;
pub mod synth;
pub mod train_lm;
pub mod train_vq;
