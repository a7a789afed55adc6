//! Balance-constrained LPs, the decentralized primal-dual iteration, the t(B)
//! frontier and the Spider fluid model.

mod build;
mod ode;
mod primal_dual;

pub use build::{
    build_balanced_lp, build_bounded_rebalancing_lp, build_rebalancing_lp, t_curve, t_curve_defects, PathModel,
    TPoint,
};
pub use ode::{
    check_kkt_parallel, integrate_fluid_spider, FluidParams, FluidState, KktReport, ParallelNetwork, Trajectory,
};
pub use primal_dual::{
    project_onto_demand_set, run_primal_dual, PdConfig, PdResult, PriceState, StepSizes, TraceEntry,
};

use crate::graph::{GraphError, NodeId};
use crate::lp::{LpError, LpStatus};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FluidError {
    #[error("no paths for demanded pair {0}>{1}")]
    EmptyPathSet(NodeId, NodeId),
    #[error("path {0} is not a trail between its pair's endpoints")]
    InvalidPath(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("solver returned {0:?}")]
    NotOptimal(LpStatus),
    #[error("primal-dual iteration did not converge after {} iterations", .0.len())]
    NotConverged(Box<Vec<TraceEntry>>),
    #[error("primal-dual iterates became non-finite at iteration {0}")]
    Diverged(usize),
    #[error("step size too large: {0}")]
    StepSizeTooLarge(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
