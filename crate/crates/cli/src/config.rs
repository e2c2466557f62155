//! Run configuration: one TOML document with a section per stage.
//!
//! Files are merged over the defaults, so a config only needs the keys it
//! changes. `--set section.key=value` overrides are applied last.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use pairalign_core::ablation::AblationConfig;
use pairalign_core::curation::CurationConfig;
use pairalign_core::dpo::AlignmentConfig;
use pairalign_core::gap::EvalConfig;
use pairalign_core::model::ModelConfig;
use pairalign_core::pretrain::PretrainConfig;
use pairalign_core::self_play::SelfPlayConfig;
use pairalign_core::world::WorldConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub name: String,
    /// Seeds data generation and model initialization.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub grid_size: usize,
    pub questions_per_pair: usize,
    pub train_pairs: usize,
    pub eval_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfPlaySection {
    pub rounds: usize,
    pub refresh_reference: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSection {
    pub iterations: usize,
    pub n_values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub curation: CurationConfig,
    pub alignment: AlignmentConfig,
    pub self_play: SelfPlaySection,
    pub eval: EvalConfig,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let sp = SelfPlayConfig::default();
        let ab = AblationConfig::default();
        Self {
            run: RunSection {
                name: "default".into(),
                seed: 0,
            },
            data: DataSection {
                grid_size: world.grid_size,
                questions_per_pair: world.questions_per_pair,
                train_pairs: 2000,
                eval_pairs: 500,
            },
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            curation: sp.curation,
            alignment: sp.alignment,
            self_play: SelfPlaySection {
                rounds: sp.rounds,
                refresh_reference: sp.refresh_reference,
            },
            eval: sp.eval,
            ablation: AblationSection {
                iterations: ab.iterations,
                n_values: ab.n_values,
            },
        }
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then each `key=value` override.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = Table::try_from(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let user: Table =
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            merge(&mut table, user, "")?;
        }
        for o in overrides {
            set(&mut table, o)?;
        }
        let cfg: Self = table
            .try_into()
            .context("config does not match the expected shape")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.grid_size == 0 || self.data.questions_per_pair == 0 {
            bail!("data.grid_size and data.questions_per_pair must be positive");
        }
        if self.data.train_pairs == 0 || self.data.eval_pairs == 0 {
            bail!("data.train_pairs and data.eval_pairs must be positive");
        }
        self.curation.validate()?;
        self.alignment.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            grid_size: self.data.grid_size,
            questions_per_pair: self.data.questions_per_pair,
        }
    }

    pub fn self_play(&self) -> SelfPlayConfig {
        SelfPlayConfig {
            rounds: self.self_play.rounds,
            refresh_reference: self.self_play.refresh_reference,
            curation: self.curation.clone(),
            alignment: self.alignment.clone(),
            eval: self.eval.clone(),
        }
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            base: self.self_play(),
            iterations: self.ablation.iterations,
            n_values: self.ablation.n_values.clone(),
        }
    }
}

/// Recursive merge that rejects keys the defaults do not have.
fn merge(base: &mut Table, user: Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = format!("{prefix}{k}");
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u, &format!("{path}."))?,
            (Some(slot), v) => *slot = v,
            (None, _) => bail!("unknown config key {path}"),
        }
    }
    Ok(())
}

/// Applies one `section.key=value` override. The value is read as a TOML
/// literal, falling back to a bare string.
pub fn set(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    let value = match toml::from_str::<Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut user = Table::new();
    let mut cur = &mut user;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("fresh table");
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    merge(table, user, "")
}
