//! Homologous (image, caption, QA) pairs and their JSONL serialization.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::world::qa::{generate_qa, oracle_answer, QAPair};
use crate::world::scene::{describe, render, sample_scene, Caption, ImageTokens, Scene};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomologousPair {
    pub scene: Scene,
    #[serde(rename = "image_tokens")]
    pub image: ImageTokens,
    #[serde(rename = "caption_tokens")]
    pub caption: Caption,
    pub qa: Vec<QAPair>,
}

impl HomologousPair {
    pub fn from_scene(scene: Scene, q: usize, qa_seed: u64) -> Self {
        let image = render(&scene);
        let caption = describe(&scene);
        let qa = generate_qa(&scene, q, qa_seed);
        Self {
            scene,
            image,
            caption,
            qa,
        }
    }

    /// Checks image, caption and every answer against the scene.
    pub fn validate(&self) -> Result<()> {
        if !self.scene.is_valid() {
            return Err(Error::Contract(format!("invalid scene {:?}", self.scene)));
        }
        if render(&self.scene) != self.image {
            return Err(Error::Contract(
                "image is not the rendering of the scene".into(),
            ));
        }
        if describe(&self.scene) != self.caption {
            return Err(Error::Contract(
                "caption is not the description of the scene".into(),
            ));
        }
        for p in &self.qa {
            if oracle_answer(&self.scene, &p.question)? != p.answer {
                return Err(Error::Contract(
                    "stored answer disagrees with the oracle".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub grid_size: usize,
    pub questions_per_pair: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            grid_size: crate::world::scene::DEFAULT_GRID,
            questions_per_pair: 6,
        }
    }
}

/// `count` pairs, each a pure function of `(seed, index)`.
pub fn generate_pairs(cfg: &WorldConfig, count: usize, seed_base: u64) -> Vec<HomologousPair> {
    (0..count as u64)
        .map(|i| {
            let scene = sample_scene(cfg.grid_size, seed::derive(seed_base, stream::SCENE, i));
            HomologousPair::from_scene(
                scene,
                cfg.questions_per_pair,
                seed::derive(seed_base, stream::QA, i),
            )
        })
        .collect()
}

/// Training pairs plus an evaluation split whose scenes never occur in training.
pub fn generate_split(
    cfg: &WorldConfig,
    train: usize,
    eval: usize,
    seed_base: u64,
) -> (Vec<HomologousPair>, Vec<HomologousPair>) {
    let train_pairs = generate_pairs(cfg, train, seed_base);
    let seen: HashSet<&Scene> = train_pairs.iter().map(|p| &p.scene).collect();
    let eval_base = seed::derive(seed_base, stream::EVAL_SPLIT, 0);
    let mut eval_pairs = Vec::with_capacity(eval);
    let mut eval_seen = HashSet::new();
    let mut i = 0u64;
    while eval_pairs.len() < eval {
        let scene = sample_scene(cfg.grid_size, seed::derive(eval_base, stream::SCENE, i));
        if !seen.contains(&scene) && eval_seen.insert(scene.clone()) {
            eval_pairs.push(HomologousPair::from_scene(
                scene,
                cfg.questions_per_pair,
                seed::derive(eval_base, stream::QA, i),
            ));
        }
        i += 1;
    }
    (train_pairs, eval_pairs)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
