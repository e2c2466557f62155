//! Unified decoder-only transformer: one network for captioning, image
//! generation and visual question answering via next-token prediction.

pub mod checkpoint;
pub mod decode;
pub mod forward;
pub mod layout;
pub mod params;

pub use decode::{answer_questions, model_answer, sample_captions, sample_images, Decoder};
pub use forward::{
    forward_graph, forward_logits, nll_loss, nll_var, response_logprobs, sequence_logprob,
    sequence_logprob_vars, sequence_logprobs, BoundParams,
};
pub use layout::{SequenceLayout, Task};
pub use params::{ModelConfig, ModelParams, ReferenceSnapshot};
