pub mod augment;
pub mod config;
pub mod eval;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod train;
