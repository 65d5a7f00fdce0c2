use thiserror::Error;

/// Where and why a time step left the admissible (SPD, finite) class.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlowUp {
    pub t: f64,
    pub step: u64,
    pub node: usize,
    pub reason: String,
}

impl std::fmt::Display for BlowUp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "flow blew up at t={:.6e} (step {}, node {}): {}", self.t, self.step, self.node, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("radius {radius} exceeds half period {limit}")]
    RadiusTooLarge { radius: f64, limit: f64 },
    #[error("fields live on different lattices")]
    LatticeMismatch,
    #[error("unexpected field layout: {0}")]
    LayoutMismatch(String),
    #[error("singular metric at node {node} (det = {det:e})")]
    SingularMetric { node: usize, det: f64 },
    #[error("background curvature bound violated: sup|Rm| = {sup_rm}")]
    HypothesisViolation { sup_rm: f64 },
    #[error("{0}")]
    BlowUp(BlowUp),
    #[error("rough spec infeasible: {0}")]
    SpecInfeasible(String),
    #[error("mollifier scale {sigma} is below half the lattice spacing {spacing}")]
    KernelUnderresolved { sigma: f64, spacing: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("snapshot format error: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
