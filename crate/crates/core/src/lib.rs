pub mod cli;
pub mod codec;
pub mod datapipe;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod trainer;
