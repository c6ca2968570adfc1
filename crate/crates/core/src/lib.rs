pub mod baselines;
pub mod bench;
pub mod env;
pub mod nn;
pub mod policy;
pub mod sac;
pub mod scene;
pub mod solver;
