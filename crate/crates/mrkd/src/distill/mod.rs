use thiserror::Error;
#[derive(Debug, Error)]
pub enum DistillError {
    #[error("placeholder")]
    Placeholder,
}
