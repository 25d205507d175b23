use alloc::string::String;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (asymmetry {asymmetry:e} >= tolerance {tol:e})")]
    NotSymmetric { asymmetry: f64, tol: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("time {t} lies outside [0, {t_end}]")]
    OutOfRange { t: f64, t_end: f64 },
    #[error("time {t} is not a grid point")]
    OffGrid { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("covariance lost positive definiteness at t = {t}")]
    RiccatiBreakdown { t: f64 },
    #[error("member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("grid point {index} (t = {t}): {source}")]
    AtGridPoint {
        index: usize,
        t: f64,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("line search failed after {shrinks} step reductions")]
    LineSearch { shrinks: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("minimizer on the search box boundary after enlargement")]
    BoxExclusion,
    #[error("singular linear system: {0}")]
    Singular(&'static str),
}

impl Error {
    pub fn for_member(self, member: usize) -> Self {
        Error::Member {
            member,
            source: alloc::boxed::Box::new(self),
        }
    }

    pub fn at_grid_point(self, index: usize, t: f64) -> Self {
        Error::AtGridPoint {
            index,
            t,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
