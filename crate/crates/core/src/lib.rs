#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
pub mod cli;
pub mod dichotomy;
pub mod expr;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod nmyc;
pub mod spectrum;
pub mod systems;
