pub mod expr;
pub mod mechanics;
pub mod symmetry;
pub mod propagator;
pub mod oplab;
pub mod scenario;
