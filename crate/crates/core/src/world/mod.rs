//! Synthetic bimodal world: grid scenes, their token images and captions,
//! templated questions and an exact answerer.

pub mod dataset;
pub mod qa;
pub mod scene;

pub use dataset::{
    generate_pairs, generate_split, read_jsonl, write_jsonl, HomologousPair, WorldConfig,
};
pub use qa::{generate_qa, oracle_answer, QAPair, Question, QuestionKind, Relation};
pub use scene::{
    describe, parse, render, sample_scene, Caption, Color, ImageTokens, Object, Scene, Shape,
};
