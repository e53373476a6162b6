#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN-rejecting guards

pub mod data;
pub mod divergence;
pub mod error;
pub mod gmm;
pub mod gmm_calibration;
pub mod gaussian;
pub mod mixture;
pub mod quadrature;
pub mod sweep;
pub mod transport;
mod search;
