//! Seeded instance generators for the three experiment families.

pub mod lse;
pub mod newsvendor;
pub mod qcqp;

pub use lse::{gen_lse, LseParams};
pub use newsvendor::{gen_newsvendor, NewsvendorParams};
pub use qcqp::{balanced_epigraph_scale, gen_qcqp, QcqpParams};
