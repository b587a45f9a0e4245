pub mod config;
pub mod diffusion;
pub mod idaf;
pub mod idap;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod render;
pub mod sweep;
pub mod tensor;
