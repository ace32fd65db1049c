use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh specification: {0}")]
    InvalidSpecification(String),

    #[error("mesh is not conforming: {0}")]
    NonConforming(String),

    #[error("no quadrature rule for dim {dim}, degree {degree}")]
    UnsupportedRule { dim: usize, degree: usize },

    #[error("element {element} has zero or negative measure")]
    SingularGeometry { element: usize },

    #[error("lumped mass is not positive: {0} offending DOFs, first {1:?}")]
    NonPositiveLumping(usize, Vec<(usize, f64)>),

    #[error("{0}")]
    ContractViolation(String),

    #[error("non-finite value in input field (first at DOF {dof})")]
    NonFiniteInput { dof: usize },

    #[error("solution blew up at t = {t}, correction {correction}, subnode {subnode}")]
    BlowUp {
        t: f64,
        correction: usize,
        subnode: usize,
    },

    #[error("all elements have zero advection speed; time step is unbounded")]
    InfiniteDt,

    #[error("conjugate gradient stagnated after {iters} iterations (residual {residual:e})")]
    SolverStagnation { iters: usize, residual: f64 },

    #[error("config error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config error: {0}")]
    ConfigInvalid(String),

    #[error("mesh file {path}, line {line}: {msg}")]
    MeshFile {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
