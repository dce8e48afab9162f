use thiserror::Error;

/// Errors raised by the numerical modules.
///
/// Every variant names the module condition that produced it so the CLI can
/// map failures one-to-one onto diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integrand singularity: theta = {theta} does not exceed theta0 = {theta0}")]
    Singularity { theta: f64, theta0: f64 },

    #[error("Bernoulli constant {r} is not above the critical value {r_c}")]
    BelowCritical { r: f64, r_c: f64 },

    #[error("no subcritical root: R = {r} is not below R0 = {r0}")]
    NoRoot { r: f64, r0: f64 },

    #[error("unbounded search: no interior minimum of R(theta) below theta = {0}")]
    UnboundedSearch(f64),

    #[error("surface stagnation: theta^2 - 2 Omega(1) = {0} is not positive")]
    SurfaceStagnation(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stagnation breach: h_p = {min_hp:e} at node (q index {i}, p index {j})")]
    StagnationBreach { i: usize, j: usize, min_hp: f64 },

    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("Newton damping underflow (residual {residual:e})")]
    Stalled { residual: f64 },

    #[error("degenerate tangent: consecutive branch points coincide")]
    DegenerateTangent,

    #[error("branch stalled at t = {t} after repeated corrector failures at minimal step")]
    BranchStall { t: f64 },

    #[error("ill-posed projector: <v, z> = {0:e}")]
    IllPosedProjector(f64),

    #[error("complement solve left the local chart at s = {s}, lambda = {lambda}")]
    OutsideChart { s: f64, lambda: f64 },

    #[error("lattice resolution: {0}")]
    Resolution(String),

    #[error("no secondary branch at lattice resolution")]
    NoSecondaryBranch,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular matrix at pivot {0}")]
    Singular(usize),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for WaveError {
    fn from(e: std::io::Error) -> Self {
        WaveError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, WaveError>;
