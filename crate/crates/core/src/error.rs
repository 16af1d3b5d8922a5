use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    /// Direction too close to the excluded chart direction -z.
    #[error("direction {dir:?} lies on the spinor chart boundary (-z); rotate the scene away from it")]
    Chart { dir: [f64; 3] },

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("non-finite integrand at node {index} (freq {freq}, dir {dir:?})")]
    Evaluation { index: usize, freq: f64, dir: [f64; 3] },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
