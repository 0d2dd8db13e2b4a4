use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("vector norm {norm} is not 1")]
    NonUnitVector { norm: f64 },
    #[error("matrix is not Hermitian (max |A - A†| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("{0} did not converge")]
    ConvergenceFailure(&'static str),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("state is not canonicalized")]
    NotCanonicalized,
    #[error("dominant transfer eigenvalue is degenerate (modulus gap {gap:e})")]
    DegenerateDominantEigenvalue { gap: f64 },
    #[error("power iteration did not converge (residual {residual:e})")]
    PowerIterationFailed { residual: f64 },
    #[error("site count {n} outside 1..={max}")]
    InvalidSiteCount { n: usize, max: usize },
    #[error("operator acts on {dim} states, expected a power of two for at most {max_sites} sites")]
    InvalidOperator { dim: usize, max_sites: usize },
    #[error("expectation has imaginary residue {residue:e}")]
    ImaginaryResidue { residue: f64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ItebdError {
    #[error("invalid evolution schedule: {0}")]
    InvalidSchedule(String),
    #[error("bond dimension must be at least 1")]
    ZeroBondDimension,
    #[error("svd failed during gate application: {0}")]
    SvdFailure(LinalgError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error)]
pub enum BellError {
    #[error("frame has {a} unprimed and {a_prime} primed vectors")]
    MalformedFrame { a: usize, a_prime: usize },
    #[error("operator acts on {expected} sites but the density matrix has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expectation has imaginary residue {residue:e}")]
    ImaginaryResidue { residue: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{what} = {requested} exceeds the limit {limit}")]
    ResourceLimit { what: &'static str, requested: usize, limit: usize },
    #[error("sites {first}..{end} out of range for a {n_sites}-site state")]
    IndexOutOfRange { first: usize, end: usize, n_sites: usize },
    #[error("lanczos did not converge (residual {residual:e})")]
    NotConverged { residual: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Itebd(#[from] ItebdError),
    #[error(transparent)]
    Bell(#[from] BellError),
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("feature detection needs at least 3 grid points, got {0}")]
    InsufficientGrid(usize),
    #[error("inconsistent records: {0}")]
    InvalidRecords(String),
    #[error("malformed csv at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Itebd(#[from] ItebdError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Bell(#[from] BellError),
}
