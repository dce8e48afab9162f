pub mod band;
pub mod branch;
pub mod eigen;
pub mod error;
pub mod lyapunov;
pub mod physical;
pub mod quadrature;
pub mod spectrum1d;
pub mod stream;
pub mod strip;
pub mod vorticity;
