use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("point ({0}, {1}) lies on no boundary")]
    NotOnBoundary(f64, f64),
    #[error("evaluation within {guard} m of element center ({x}, {y})")]
    Singularity { x: f64, y: f64, guard: f64 },
    #[error("planned subgraph is disconnected: {0}")]
    Connectivity(String),
    #[error("step size {dt} violates explicit stability bound {bound}")]
    StepSize { dt: f64, bound: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
