pub mod autodiff;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod objective;
pub mod perception;
pub mod policy;
pub mod sim;
pub mod trainer;
