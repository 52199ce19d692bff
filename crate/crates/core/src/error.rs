use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("work budget exceeded: {needed} operations requested, cap is {cap}")]
    BudgetExceeded { needed: u128, cap: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("lambda = {0} is not represented by the form")]
    NotRepresented(u64),

    #[error("lambda = {lambda} exceeds the table cap {cap}")]
    CapExceeded { lambda: u64, cap: u64 },

    #[error("fit needs at least {needed} usable points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("empty admissible window: {0}")]
    EmptyWindow(String),

    #[error("surface sampling failed: {0}")]
    SurfaceSampling(String),

    #[error("integer overflow in {0}")]
    Overflow(&'static str),

    #[error("dyadic windows exhausted: {requested} windows need λ up to 2^{needed_bits}, the cap allows at most {feasible}")]
    WindowBudget { requested: u64, needed_bits: u64, feasible: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded { .. } | Error::WindowBudget { .. })
    }
}

/// Explicit operation-count cap. Operations estimate their cost up front and refuse to start
/// when the estimate exceeds the cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    cap: u64,
}

impl Budget {
    pub const DEFAULT_CAP: u64 = 20_000_000_000;

    pub fn new(cap: u64) -> Self {
        Self { cap }
    }

    pub fn unlimited() -> Self {
        Self { cap: u64::MAX }
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn check(&self, needed: u128) -> Result<()> {
        if needed > self.cap as u128 {
            Err(Error::BudgetExceeded { needed, cap: self.cap })
        } else {
            Ok(())
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CAP)
    }
}
