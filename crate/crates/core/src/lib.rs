// `!(x > 0.0)` guards reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dynamics;
pub mod executability;
pub mod hjb_oracle;
pub mod simulation;
pub mod value_functions;

pub use controller::{control, control_step, ControlError, ControllerConfig, SigmaMode};
pub use dynamics::{BoxRegion, DynamicsError, SystemModel};
pub use executability::{analyze_state, grid_analysis, AnalysisError, ExecutabilityReport, GridAnalysis, Tolerances};
pub use hjb_oracle::{value_iteration, GridSpec, HjbError};
pub use simulation::{simulate, SimulationConfig, SimulationError, Termination, Trajectory};
pub use value_functions::{
    hjb_residual, lie_derivatives, LieBundle, LieRow, NeuralMlp, StateCost, TabulatedValue, TaskSpec, ValueBackend,
    ValueError,
};
