//! Semi-supervised multi-domain adversarial learning at desk scale.
//!
//! The crate covers the full loop: a small reverse-mode autodiff engine, the
//! feature extractor / classifier / discriminator stack with a gradient
//! reversal layer, the DANN, MADA and MuLANN objectives with known-unknown
//! discrimination, saddle-point training, and exact verification of
//! H-divergence generalization bounds on discrete instances.

pub mod autodiff;
pub mod bounds;
pub mod data;
pub mod harness;
pub mod losses;
pub mod network;
pub mod trainer;
