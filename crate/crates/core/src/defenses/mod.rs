//! Defense compilers and reference transforms.

pub mod front;
pub mod regulator;
pub mod surakav;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DefenseError {
    #[error("invalid {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("reference trace exhausted after {bursts} bursts with {remaining} real cells left")]
    ReferenceExhausted { bursts: usize, remaining: usize },
    #[error("empty base trace")]
    EmptyBase,
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> DefenseError {
    DefenseError::InvalidParam {
        field,
        reason: reason.into(),
    }
}

pub(crate) fn finite_positive(field: &'static str, v: f64) -> Result<(), DefenseError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}
