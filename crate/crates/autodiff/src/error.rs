use thiserror::Error;

/// Errors raised by tensor construction, graph operations and the optimizer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: expected a rank-{expected} tensor, found shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },

    #[error("{op}: shapes {left:?} and {right:?} differ")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: extent {extent} along `{axis}` is odd; pad the input to an even size before pooling")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        extent: usize,
    },

    #[error("conv2d: kernel extent {0} must be odd for same-padding")]
    EvenKernel(usize),

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },

    #[error("{0}: non-finite value in input; sanitize training data upstream")]
    NonFinite(&'static str),

    #[error("logcosh_loss: the target must not require gradients")]
    TargetRequiresGrad,

    #[error("backward: loss must be a scalar, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("channel slice [{start}, {end}) out of range for {channels} channels")]
    ChannelRange {
        start: usize,
        end: usize,
        channels: usize,
    },

    #[error("concat: needs at least one input")]
    EmptyConcat,

    #[error("optimizer config: {0}")]
    Config(String),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
