use thiserror::Error;

pub use crate::dynamics::DynamicsError;
pub use crate::liouville::LiouvilleError;
pub use crate::model::ModelError;
pub use crate::steering::SteerError;
pub use crate::stochastic::StochasticError;
pub use crate::torus::TorusError;

/// Any failure raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Torus(#[from] TorusError),
    #[error(transparent)]
    Steer(#[from] SteerError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Liouville(#[from] LiouvilleError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
