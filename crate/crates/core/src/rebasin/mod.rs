//! Transport plans over an [`Mlp`](crate::nn::Mlp), the re-based mapping,
//! alignment costs, plan optimization and the weight-matching baseline.

mod cost;
mod optimize;
mod plan;
mod wm;

pub use cost::{c_l2, c_mid, c_rnd, cost_and_grad, interpolate_on_tape, rebase_on_tape, CostKind};
pub use optimize::{optimize_plan, IterationRecord, RebasinConfig, RebasinOutcome};
pub use plan::{apply_plan, interpolate, l1_distance, squared_distance, PlanMode, TransportPlan};
pub use wm::weight_matching;
