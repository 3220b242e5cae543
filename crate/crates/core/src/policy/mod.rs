//! Compact autoregressive token policy: a single Elman recurrence with a softmax
//! output head, exact sampling and exact reverse-mode gradients.

mod checkpoint;
mod model;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use model::{
    accumulate_weighted_grad, backprop_continuations, continuation_logprobs, forward_logits,
    grad_log_prob, log_softmax, sample_from_state, sample_sequence, sequence_log_prob, softmax,
    Decoding, GenerationTrace, Termination,
};
pub use params::{
    init_params, init_scale, interpolate_params, Dims, PolicyParameters, PolicySnapshot,
    SnapshotRole,
};
