use thiserror::Error;

use crate::octree::NeuronId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("theta must lie in (0, 1/sqrt(3)], got {0}")]
    InvalidTheta(f64),
    #[error("theta {0} reaches 1/sqrt(3); the subdivision bound diverges")]
    Singularity(f64),
    #[error("query point coincides with the centroid")]
    DegenerateGeometry,
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("neuron {id} at {position} lies outside the simulation bounds")]
    OutOfBounds { id: NeuronId, position: String },
    #[error("neurons {first} and {second} share the position {position}")]
    DuplicatePosition {
        first: NeuronId,
        second: NeuronId,
        position: String,
    },
    #[error("duplicate neuron id {0}")]
    DuplicateId(NeuronId),
    #[error("unknown neuron id {0}")]
    UnknownNeuron(NeuronId),
    #[error("cannot expand a leaf node")]
    ExpandLeaf,
    #[error("octree exceeded depth {0}; points are too close to separate")]
    DepthExceeded(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("rank count {0} is not admissible; use a power of two (1, 2, 4, 8, ..., 64, ...)")]
    InvalidRankCount(usize),
    #[error("{neurons} neurons cannot be spread over {ranks} ranks")]
    TooFewNeurons { neurons: usize, ranks: usize },
    #[error("subdomains do not tile the simulation bounds: {0}")]
    InconsistentTiling(String),
    #[error("stale node handle: {0}")]
    StaleHandle(String),
    #[error("population file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
