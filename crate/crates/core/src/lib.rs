pub mod data_model;
pub mod metrics;
pub mod curation;
pub mod annotation;
pub mod autograd;
pub mod model;
pub mod losses;
pub mod synth;
pub mod trainer;
