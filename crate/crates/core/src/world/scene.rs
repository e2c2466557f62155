use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::vocab::{self, Token};

pub const DEFAULT_GRID: usize = 4;
pub const MAX_OBJECTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub fn from_word(t: Token) -> Option<Self> {
        Self::ALL.into_iter().find(|s| vocab::shape_word(*s) == t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_word(t: Token) -> Option<Self> {
        Self::ALL.into_iter().find(|c| vocab::color_word(*c) == t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub shape: Shape,
    pub color: Color,
    pub row: usize,
    pub col: usize,
}

/// Ground-truth world state. Objects are kept in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub grid_size: usize,
    pub objects: Vec<Object>,
}

/// Cell-state token sequence of length `grid_size²`, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageTokens(pub Vec<Token>);

impl ImageTokens {
    pub fn tokens(&self) -> &[Token] {
        &self.0
    }
}

/// Word-token sequence in the canonical caption grammar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Caption(pub Vec<Token>);

impl Caption {
    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn text(&self) -> String {
        vocab::render_tokens(&self.0)
    }
}

impl Scene {
    /// Builds a scene, sorting objects into row-major order.
    pub fn new(grid_size: usize, mut objects: Vec<Object>) -> Result<Self> {
        objects.sort_by_key(|o| (o.row, o.col));
        let scene = Self { grid_size, objects };
        scene.check_cells()?;
        Ok(scene)
    }

    fn check_cells(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.row >= self.grid_size || o.col >= self.grid_size {
                return Err(Error::Contract(format!(
                    "object at ({}, {}) outside a {} grid",
                    o.row, o.col, self.grid_size
                )));
            }
            if self.objects[..i]
                .iter()
                .any(|p| p.row == o.row && p.col == o.col)
            {
                return Err(Error::Contract(format!(
                    "two objects share cell ({}, {})",
                    o.row, o.col
                )));
            }
        }
        Ok(())
    }

    /// True for scenes the sampler can produce: 1 to 3 objects, no collisions.
    pub fn is_valid(&self) -> bool {
        (1..=MAX_OBJECTS).contains(&self.objects.len()) && self.check_cells().is_ok()
    }

    pub fn cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    /// First object of `shape` in row-major order.
    pub fn first_of(&self, shape: Shape) -> Option<&Object> {
        self.objects.iter().find(|o| o.shape == shape)
    }

    pub fn count(&self, shape: Shape) -> usize {
        self.objects.iter().filter(|o| o.shape == shape).count()
    }

    pub fn contains(&self, shape: Shape, color: Color) -> bool {
        self.objects
            .iter()
            .any(|o| o.shape == shape && o.color == color)
    }
}

/// Uniform object count in 1..=3, then uniform shape, color and free cell.
pub fn sample_scene(grid_size: usize, rng_seed: u64) -> Scene {
    let mut rng = seed::rng(rng_seed);
    let count = rng.gen_range(1..=MAX_OBJECTS.min(grid_size * grid_size));
    let mut free: Vec<(usize, usize)> = (0..grid_size)
        .flat_map(|r| (0..grid_size).map(move |c| (r, c)))
        .collect();
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = *Shape::ALL.choose(&mut rng).expect("non-empty");
        let color = *Color::ALL.choose(&mut rng).expect("non-empty");
        let (row, col) = free.swap_remove(rng.gen_range(0..free.len()));
        objects.push(Object {
            shape,
            color,
            row,
            col,
        });
    }
    Scene::new(grid_size, objects).expect("sampled cells are distinct")
}

pub fn render(scene: &Scene) -> ImageTokens {
    let mut tokens = vec![vocab::CELL_EMPTY; scene.cells()];
    for o in &scene.objects {
        tokens[o.row * scene.grid_size + o.col] = vocab::cell_token(o.shape, o.color);
    }
    ImageTokens(tokens)
}

/// Inverse of [`render`]. Accepts any number of occupied cells.
pub fn parse(image: &ImageTokens, grid_size: usize) -> Result<Scene> {
    let tokens = image.tokens();
    if tokens.len() != grid_size * grid_size {
        return Err(Error::MalformedImage(format!(
            "expected {} cell tokens, got {}",
            grid_size * grid_size,
            tokens.len()
        )));
    }
    let mut objects = Vec::new();
    for (i, &t) in tokens.iter().enumerate() {
        if !vocab::is_cell(t) {
            return Err(Error::MalformedImage(format!(
                "token {t} at cell {i} is not a cell state"
            )));
        }
        if let Some((shape, color)) = vocab::cell_content(t) {
            objects.push(Object {
                shape,
                color,
                row: i / grid_size,
                col: i % grid_size,
            });
        }
    }
    Ok(Scene { grid_size, objects })
}

/// "a <color> <shape> at row <r> col <c>" clauses joined by "and", row-major.
pub fn describe(scene: &Scene) -> Caption {
    let mut out = Vec::new();
    for (i, o) in scene.objects.iter().enumerate() {
        if i > 0 {
            out.push(vocab::word("and"));
        }
        out.extend([
            vocab::word("a"),
            vocab::color_word(o.color),
            vocab::shape_word(o.shape),
            vocab::word("at"),
            vocab::word("row"),
            vocab::number_word(o.row),
            vocab::word("col"),
            vocab::number_word(o.col),
        ]);
    }
    Caption(out)
}
