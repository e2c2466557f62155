use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{self, Token};
use crate::world::{Caption, ImageTokens};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Und,
    Gen,
    Vqa,
}

/// A training/scoring sequence split into conditioning prompt and response.
///
/// ```text
/// UND  [BOS, TASK_UND, image, SEP | caption, EOS]
/// GEN  [BOS, TASK_GEN, caption, SEP | image, EOS]
/// VQA  [BOS, TASK_VQA, image, SEP, question, SEP | answer, EOS]
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub task: Task,
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
}

pub fn und_prompt(image: &ImageTokens) -> Vec<Token> {
    let mut p = vec![vocab::BOS, vocab::TASK_UND];
    p.extend_from_slice(image.tokens());
    p.push(vocab::SEP);
    p
}

pub fn gen_prompt(caption: &Caption) -> Vec<Token> {
    let mut p = vec![vocab::BOS, vocab::TASK_GEN];
    p.extend_from_slice(caption.tokens());
    p.push(vocab::SEP);
    p
}

/// Shared image prefix of every VQA prompt about `image`.
pub fn vqa_prefix(image: &ImageTokens) -> Vec<Token> {
    let mut p = vec![vocab::BOS, vocab::TASK_VQA];
    p.extend_from_slice(image.tokens());
    p.push(vocab::SEP);
    p
}

pub fn vqa_prompt(image: &ImageTokens, question: &[Token]) -> Vec<Token> {
    let mut p = vqa_prefix(image);
    p.extend_from_slice(question);
    p.push(vocab::SEP);
    p
}

impl SequenceLayout {
    pub fn understanding(image: &ImageTokens, caption: &Caption) -> Self {
        let mut response = caption.tokens().to_vec();
        response.push(vocab::EOS);
        Self {
            task: Task::Und,
            prompt: und_prompt(image),
            response,
        }
    }

    pub fn generation(caption: &Caption, image: &ImageTokens) -> Self {
        let mut response = image.tokens().to_vec();
        response.push(vocab::EOS);
        Self {
            task: Task::Gen,
            prompt: gen_prompt(caption),
            response,
        }
    }

    pub fn vqa(image: &ImageTokens, question: &[Token], answer: Token) -> Self {
        Self {
            task: Task::Vqa,
            prompt: vqa_prompt(image, question),
            response: vec![answer, vocab::EOS],
        }
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut t = self.prompt.clone();
        t.extend_from_slice(&self.response);
        t
    }

    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.response.is_empty() {
            return Err(Error::Contract("empty response segment".into()));
        }
        if self.prompt.is_empty() {
            return Err(Error::Contract("empty prompt segment".into()));
        }
        if self.len() > max_len {
            return Err(Error::TooLong {
                len: self.len(),
                max: max_len,
            });
        }
        Ok(())
    }
}
