//! Joint token vocabulary shared by the world, the model and all file formats.
//!
//! Ids are contiguous from 0: seven specials, then the 13 cell-state tokens as
//! one block, then the closed word list.

use crate::world::{Color, Shape};

pub type Token = u32;

pub const PAD: Token = 0;
pub const BOS: Token = 1;
pub const EOS: Token = 2;
pub const SEP: Token = 3;
pub const TASK_UND: Token = 4;
pub const TASK_GEN: Token = 5;
pub const TASK_VQA: Token = 6;

pub const CELL_BASE: Token = 7;
pub const CELL_EMPTY: Token = CELL_BASE;
pub const NUM_CELL_STATES: u32 = 1 + (Shape::ALL.len() * Color::ALL.len()) as u32;
pub const WORD_BASE: Token = CELL_BASE + NUM_CELL_STATES;

pub const WORDS: [&str; 30] = [
    "a", "red", "green", "blue", "yellow", "circle", "square", "triangle", "at", "row", "col", "0",
    "1", "2", "3", "and", "is", "there", "how", "many", "what", "color", "the", "left", "right",
    "of", "above", "below", "yes", "no",
];

pub const VOCAB_SIZE: usize = WORD_BASE as usize + WORDS.len();

/// Word token id by its spelling. Panics on words outside the closed list.
pub fn word(w: &str) -> Token {
    WORDS
        .iter()
        .position(|x| *x == w)
        .map(|i| WORD_BASE + i as Token)
        .unwrap_or_else(|| panic!("unknown word {w:?}"))
}

pub fn word_str(t: Token) -> Option<&'static str> {
    t.checked_sub(WORD_BASE)
        .and_then(|i| WORDS.get(i as usize).copied())
}

pub fn is_word(t: Token) -> bool {
    (WORD_BASE..WORD_BASE + WORDS.len() as Token).contains(&t)
}

pub fn is_cell(t: Token) -> bool {
    (CELL_BASE..CELL_BASE + NUM_CELL_STATES).contains(&t)
}

pub fn cell_token(shape: Shape, color: Color) -> Token {
    CELL_BASE + 1 + (shape.index() * Color::ALL.len() + color.index()) as Token
}

/// `None` for the empty cell, `Some((shape, color))` for an occupied one.
pub fn cell_content(t: Token) -> Option<(Shape, Color)> {
    if !is_cell(t) || t == CELL_EMPTY {
        return None;
    }
    let k = (t - CELL_BASE - 1) as usize;
    Some((
        Shape::ALL[k / Color::ALL.len()],
        Color::ALL[k % Color::ALL.len()],
    ))
}

pub fn color_word(c: Color) -> Token {
    word(c.name())
}

pub fn shape_word(s: Shape) -> Token {
    word(s.name())
}

pub fn number_word(n: usize) -> Token {
    assert!(n <= 3, "no word for {n}");
    word(["0", "1", "2", "3"][n])
}

/// Closed answer vocabulary: yes, no, 0-3, the four colors, the three shapes.
pub fn answer_tokens() -> Vec<Token> {
    let mut out = vec![word("yes"), word("no")];
    out.extend((0..4).map(number_word));
    out.extend(Color::ALL.iter().map(|c| color_word(*c)));
    out.extend(Shape::ALL.iter().map(|s| shape_word(*s)));
    out
}

/// [`answer_tokens`] in ascending id order.
pub fn answer_tokens_sorted() -> Vec<Token> {
    let mut a = answer_tokens();
    a.sort_unstable();
    a
}

pub fn is_answer(t: Token) -> bool {
    answer_tokens().contains(&t)
}

/// Tokens permitted in a caption response: every word plus EOS.
pub fn caption_tokens() -> Vec<Token> {
    let mut out: Vec<Token> = (WORD_BASE..WORD_BASE + WORDS.len() as Token).collect();
    out.push(EOS);
    out
}

pub fn cell_tokens() -> Vec<Token> {
    (CELL_BASE..CELL_BASE + NUM_CELL_STATES).collect()
}

/// Human-readable rendering of any token sequence.
pub fn render_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|&t| match t {
            PAD => "<pad>".to_string(),
            BOS => "<bos>".to_string(),
            EOS => "<eos>".to_string(),
            SEP => "<sep>".to_string(),
            TASK_UND => "<und>".to_string(),
            TASK_GEN => "<gen>".to_string(),
            TASK_VQA => "<vqa>".to_string(),
            CELL_EMPTY => ".".to_string(),
            t if is_cell(t) => {
                let (s, c) = cell_content(t).expect("occupied cell");
                format!("[{}-{}]", c.name(), s.name())
            }
            t => word_str(t)
                .map(str::to_string)
                .unwrap_or_else(|| format!("<{t}>")),
        })
        .collect::<Vec<_>>()
        .join(" ")
}
