use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("empty relation name")]
    EmptyRelation,
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid entity spans: {0}")]
    Span(String),
    #[error("empty bag")]
    EmptyBag,
    #[error("no positive facts to compute recall against")]
    NoPositives,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gradient check failed: max relative error {max_rel_err:e} exceeds {tol:e} (worst: {worst})")]
    GradCheck {
        max_rel_err: f64,
        tol: f64,
        worst: String,
    },
}
