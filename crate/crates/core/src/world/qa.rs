//! Question templates, the question generator, and the ground-truth answerer.
//!
//! Grammar (word tokens):
//!
//! ```text
//! presence  is there a <color> <shape>
//! count     how many <shape>
//! color     what color is the <shape>
//! relation  is the <shape> (left of | right of | above | below) the <shape>
//! ```
//!
//! "the <shape>" names the first object of that shape in row-major order.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::vocab::{self, word, Token};
use crate::world::scene::{Color, Scene, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Presence,
    Count,
    Color,
    Relation,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 4] = [
        QuestionKind::Presence,
        QuestionKind::Count,
        QuestionKind::Color,
        QuestionKind::Relation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionKind::Presence => "presence",
            QuestionKind::Count => "count",
            QuestionKind::Color => "color",
            QuestionKind::Relation => "relation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Question {
    Presence(Color, Shape),
    Count(Shape),
    Color(Shape),
    Relation(Shape, Relation, Shape),
}

impl Question {
    pub fn kind(&self) -> QuestionKind {
        match self {
            Question::Presence(..) => QuestionKind::Presence,
            Question::Count(_) => QuestionKind::Count,
            Question::Color(_) => QuestionKind::Color,
            Question::Relation(..) => QuestionKind::Relation,
        }
    }

    pub fn encode(&self) -> Vec<Token> {
        match *self {
            Question::Presence(c, s) => vec![
                word("is"),
                word("there"),
                word("a"),
                vocab::color_word(c),
                vocab::shape_word(s),
            ],
            Question::Count(s) => vec![word("how"), word("many"), vocab::shape_word(s)],
            Question::Color(s) => vec![
                word("what"),
                word("color"),
                word("is"),
                word("the"),
                vocab::shape_word(s),
            ],
            Question::Relation(a, rel, b) => {
                let mut out = vec![word("is"), word("the"), vocab::shape_word(a)];
                match rel {
                    Relation::LeftOf => out.extend([word("left"), word("of")]),
                    Relation::RightOf => out.extend([word("right"), word("of")]),
                    Relation::Above => out.push(word("above")),
                    Relation::Below => out.push(word("below")),
                }
                out.extend([word("the"), vocab::shape_word(b)]);
                out
            }
        }
    }

    pub fn decode(tokens: &[Token]) -> Result<Self> {
        let err = || Error::QuestionGrammar(vocab::render_tokens(tokens));
        let shape = |t: Token| Shape::from_word(t).ok_or_else(err);
        let w = |s: &str| word(s);
        match tokens {
            [is, there, a, c, s] if *is == w("is") && *there == w("there") && *a == w("a") => Ok(
                Question::Presence(Color::from_word(*c).ok_or_else(err)?, shape(*s)?),
            ),
            [how, many, s] if *how == w("how") && *many == w("many") => {
                Ok(Question::Count(shape(*s)?))
            }
            [what, color, is, the, s]
                if *what == w("what")
                    && *color == w("color")
                    && *is == w("is")
                    && *the == w("the") =>
            {
                Ok(Question::Color(shape(*s)?))
            }
            [is, the, a, rest @ ..] if *is == w("is") && *the == w("the") => {
                let (rel, tail) = match rest {
                    [l, of, tail @ ..] if *l == w("left") && *of == w("of") => {
                        (Relation::LeftOf, tail)
                    }
                    [r, of, tail @ ..] if *r == w("right") && *of == w("of") => {
                        (Relation::RightOf, tail)
                    }
                    [ab, tail @ ..] if *ab == w("above") => (Relation::Above, tail),
                    [be, tail @ ..] if *be == w("below") => (Relation::Below, tail),
                    _ => return Err(err()),
                };
                match tail {
                    [the2, b] if *the2 == w("the") => {
                        Ok(Question::Relation(shape(*a)?, rel, shape(*b)?))
                    }
                    _ => Err(err()),
                }
            }
            _ => Err(err()),
        }
    }

    /// Ground-truth answer against a scene.
    ///
    /// Questions about a shape the scene lacks, and counts above 3, answer
    /// "no": the closed answer vocabulary has no better token for them.
    pub fn answer(&self, scene: &Scene) -> Token {
        let yes_no = |b: bool| if b { word("yes") } else { word("no") };
        match *self {
            Question::Presence(c, s) => yes_no(scene.contains(s, c)),
            Question::Count(s) => match scene.count(s) {
                n @ 0..=3 => vocab::number_word(n),
                _ => word("no"),
            },
            Question::Color(s) => scene
                .first_of(s)
                .map(|o| vocab::color_word(o.color))
                .unwrap_or_else(|| word("no")),
            Question::Relation(a, rel, b) => match (scene.first_of(a), scene.first_of(b)) {
                (Some(oa), Some(ob)) => yes_no(match rel {
                    Relation::LeftOf => oa.col < ob.col,
                    Relation::RightOf => oa.col > ob.col,
                    Relation::Above => oa.row < ob.row,
                    Relation::Below => oa.row > ob.row,
                }),
                _ => word("no"),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: Vec<Token>,
    pub answer: Token,
    pub kind: QuestionKind,
}

/// Answers a tokenized question from scene structure.
pub fn oracle_answer(scene: &Scene, question: &[Token]) -> Result<Token> {
    Ok(Question::decode(question)?.answer(scene))
}

/// `q` question/answer pairs drawn from a six-slot cycle:
/// presence (true object), count, color, presence (absent distractor),
/// relation (count when fewer than two distinct shapes), count of any shape.
///
/// With `q ≥ 4` at least one answer is "no", so wrong images can fail.
pub fn generate_qa(scene: &Scene, q: usize, rng_seed: u64) -> Vec<QAPair> {
    assert!(q >= 1, "q must be at least 1");
    assert!(
        !scene.objects.is_empty(),
        "questions need at least one object"
    );
    let mut rng = seed::rng(rng_seed);
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let obj = *scene.objects.choose(&mut rng).expect("non-empty");
        let question = match i % 6 {
            0 => Question::Presence(obj.color, obj.shape),
            1 => Question::Count(obj.shape),
            2 => Question::Color(obj.shape),
            3 => distractor(scene, &mut rng),
            4 => {
                let mut shapes: Vec<Shape> = Shape::ALL
                    .into_iter()
                    .filter(|s| scene.count(*s) > 0)
                    .collect();
                if shapes.len() >= 2 {
                    shapes.shuffle(&mut rng);
                    let rel = *Relation::ALL.choose(&mut rng).expect("non-empty");
                    Question::Relation(shapes[0], rel, shapes[1])
                } else {
                    Question::Count(*Shape::ALL.choose(&mut rng).expect("non-empty"))
                }
            }
            _ => Question::Count(*Shape::ALL.choose(&mut rng).expect("non-empty")),
        };
        out.push(QAPair {
            question: question.encode(),
            answer: question.answer(scene),
            kind: question.kind(),
        });
    }
    out
}

fn distractor(scene: &Scene, rng: &mut impl Rng) -> Question {
    let absent: Vec<(Color, Shape)> = Color::ALL
        .into_iter()
        .flat_map(|c| Shape::ALL.into_iter().map(move |s| (c, s)))
        .filter(|(c, s)| !scene.contains(*s, *c))
        .collect();
    let (c, s) = absent[rng.gen_range(0..absent.len())];
    Question::Presence(c, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::scene::{sample_scene, Object};

    fn red_circle() -> Scene {
        Scene::new(
            4,
            vec![Object {
                shape: Shape::Circle,
                color: Color::Red,
                row: 1,
                col: 2,
            }],
        )
        .unwrap()
    }

    #[test]
    fn presence_examples() {
        let s = red_circle();
        let q = Question::Presence(Color::Red, Shape::Circle).encode();
        assert_eq!(vocab::render_tokens(&q), "is there a red circle");
        assert_eq!(oracle_answer(&s, &q).unwrap(), word("yes"));
        let q = Question::Presence(Color::Blue, Shape::Square).encode();
        assert_eq!(oracle_answer(&s, &q).unwrap(), word("no"));
    }

    #[test]
    fn count_of_absent_shape_is_zero() {
        let q = Question::Count(Shape::Triangle).encode();
        assert_eq!(oracle_answer(&red_circle(), &q).unwrap(), word("0"));
    }

    #[test]
    fn absent_referent_answers_no() {
        let s = red_circle();
        assert_eq!(Question::Color(Shape::Square).answer(&s), word("no"));
        assert_eq!(
            Question::Relation(Shape::Circle, Relation::LeftOf, Shape::Square).answer(&s),
            word("no")
        );
    }

    #[test]
    fn every_question_round_trips_through_tokens() {
        let mut all = Vec::new();
        for s in Shape::ALL {
            all.push(Question::Count(s));
            all.push(Question::Color(s));
            for c in Color::ALL {
                all.push(Question::Presence(c, s));
            }
            for b in Shape::ALL {
                for r in Relation::ALL {
                    all.push(Question::Relation(s, r, b));
                }
            }
        }
        for q in all {
            assert_eq!(Question::decode(&q.encode()).unwrap(), q);
        }
    }

    #[test]
    fn unparseable_questions_are_rejected() {
        let bad = [
            vec![],
            vec![word("is"), word("there")],
            vec![word("how"), word("many"), word("red")],
            vec![
                word("is"),
                word("the"),
                word("circle"),
                word("left"),
                word("the"),
                word("square"),
            ],
            vec![vocab::BOS],
        ];
        for q in bad {
            assert!(matches!(
                oracle_answer(&red_circle(), &q),
                Err(Error::QuestionGrammar(_))
            ));
        }
    }

    #[test]
    fn generated_answers_are_oracle_correct_and_mixed() {
        for s in 0..300 {
            let scene = sample_scene(4, seed::derive(1, 2, s));
            let qa = generate_qa(&scene, 6, s);
            assert_eq!(qa.len(), 6);
            for p in &qa {
                assert_eq!(oracle_answer(&scene, &p.question).unwrap(), p.answer);
                assert_eq!(Question::decode(&p.question).unwrap().kind(), p.kind);
                assert!(vocab::is_answer(p.answer));
            }
            assert!(qa.iter().any(|p| p.answer == word("no")));
            let distinct_shapes = Shape::ALL.iter().filter(|sh| scene.count(**sh) > 0).count();
            if distinct_shapes >= 2 {
                for k in QuestionKind::ALL {
                    assert!(qa.iter().any(|p| p.kind == k), "missing {k:?}");
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let scene = sample_scene(4, 5);
        assert_eq!(generate_qa(&scene, 9, 1), generate_qa(&scene, 9, 1));
    }
}
