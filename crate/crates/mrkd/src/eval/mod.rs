use thiserror::Error;
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("placeholder")]
    Placeholder,
}
