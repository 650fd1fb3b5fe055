//! Kantorovich problems: the exact discrete oracle and the entropic plan path.

pub mod entropic;
pub mod exact;
pub mod path;
pub mod plan;

pub use entropic::{select_eta, sinkhorn, solve_entropic, Potentials, SinkhornOptions};
pub use exact::{solve_exact, KantorovichResult, PivotRule};
pub use path::{continuous_plan_path, PathOptions, PathSample, PlanPath};
pub use plan::{cell_cost_matrix, CostMatrix, Plan};
