//! Software model of a bit-level composable DNN accelerator.

pub mod brick;
pub mod fusion;
pub mod array;
pub mod isa;
pub mod refmodel;
pub mod arch;
pub mod image;
pub mod sim;
pub mod codegen;
pub mod energy;
