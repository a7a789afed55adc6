pub mod fluid;
pub mod graph;
pub mod lp;
pub mod sim;
pub mod transport;
pub mod workload;
pub mod experiments;
