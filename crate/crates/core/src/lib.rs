//! Output-input stability, relative degree and minimum-phase analysis for
//! nonlinear control systems `x' = f(x, u)`, `y = h(x)`.

pub mod certifier;
pub mod expr;
pub mod gains;
pub mod jets;
pub mod linear;
pub mod relative_degree;
pub mod simulation;
pub mod system;

pub use certifier::{
    BoundSpec, CertificateReport, EnsembleSpec, EnvelopeFit, FalsifyReport, InputFamily, LyapunovReport,
    PropertyKind, Verdict,
};
pub use expr::{parse, Expr, Var};
pub use gains::{ClassKFn, ClassKLFn};
pub use jets::{JetTable, JET_CAP};
pub use linear::LinearSystem;
pub use relative_degree::{Degree, Outcome, RelDegVerdict};
pub use simulation::{InputSignal, Trajectory, TrajectoryStatus};
pub use system::SystemModel;
