use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid distribution parameters: {0}")]
    Distribution(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("container: {0}")]
    Container(String),
    #[error("model/data mismatch: {0}")]
    Mismatch(String),
    #[error("arithmetic decoder: stream exhausted or malformed ({0})")]
    StreamExhausted(String),
    #[error("image: {0}")]
    Image(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
