pub mod arch;
pub mod corr;
pub mod cppn;
mod fft2;
pub mod rng;
pub mod stats;
pub mod pipeline;
