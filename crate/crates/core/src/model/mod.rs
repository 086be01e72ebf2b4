//! Multi-resolution ConvLSTM sequence-to-sequence forecaster.
//!
//! A [`Seq2SeqNet`] maps the field (or image) at one timepoint to the next.
//! Training feeds ground-truth frames ([`train`]); inference warms the
//! recurrent state on a prefix and then feeds its own output back
//! ([`predict`]).

mod cell;
mod checkpoint;
mod net;
mod resample;
mod sample;
mod train;

pub use cell::{cell_gates, cell_step, CellOutput, ConvLstmCell};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC};
pub use resample::{pool_slices, unpool_slice};
pub use net::{Architecture, Bound, Mode, Seq2SeqNet, State, DEFAULT_DVF_SCALE};
pub use sample::{assemble_channels, assemble_dvf, SequenceBatch, SequenceSample};
pub use train::{predict, sequence_loss, train, TrainConfig, TrainReport};
