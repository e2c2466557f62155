//! Ablation harness: alignment modes, self-play iterations and a sweep over
//! the number of sampled candidates, one gap row per cell.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curation::{curate_dataset, CurationConfig};
use crate::dpo::{align_run, AlignMode};
use crate::error::{Error, Result};
use crate::gap::{gap_report, GapReport};
use crate::model::ModelParams;
use crate::self_play::{run_self_play, SelfPlayConfig};
use crate::world::HomologousPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub base: SelfPlayConfig,
    pub iterations: usize,
    pub n_values: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            base: SelfPlayConfig::default(),
            iterations: 3,
            n_values: vec![1, 2, 4, 6, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub n: usize,
    pub round: usize,
    pub tuples: usize,
    pub und: f64,
    pub gen: f64,
    pub gap: f64,
}

impl AblationRow {
    fn of(mode: &str, n: usize, round: usize, tuples: usize, r: &GapReport) -> Self {
        Self {
            mode: mode.to_string(),
            n,
            round,
            tuples,
            und: r.understanding_score,
            gen: r.generation_score,
            gap: r.gap,
        }
    }
}

/// Cells in order: baseline, und-only DPO, gen-only DPO, paired DPO for each
/// iteration, then one paired single-round cell per `n`. A sweep cell whose
/// `n` cannot form pairs (n < 2) keeps the untouched model with 0 tuples.
pub fn ablation_suite(
    initial: &ModelParams,
    pairs: &[HomologousPair],
    eval_pairs: &[HomologousPair],
    cfg: &AblationConfig,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let base = &cfg.base;
    let n = base.curation.n;
    let mut rows = Vec::new();
    let mut push = |row: AblationRow, rows: &mut Vec<AblationRow>| {
        progress(&row);
        rows.push(row);
    };

    let baseline = gap_report(initial, eval_pairs, &base.eval)?;
    push(AblationRow::of("baseline", 0, 0, 0, &baseline), &mut rows);

    let curated = curate_dataset(initial, pairs, &base.curation, 0)?;
    for (mode, name) in [
        (AlignMode::UndOnly, "dpo_und"),
        (AlignMode::GenOnly, "dpo_gen"),
    ] {
        let mut acfg = base.alignment.clone();
        acfg.mode = mode;
        let out = align_run(initial, &curated.tuples, &acfg, |_| {})?;
        let r = gap_report(&out.params, eval_pairs, &base.eval)?;
        push(
            AblationRow::of(name, n, 1, curated.tuples.len(), &r),
            &mut rows,
        );
    }

    let sp = SelfPlayConfig {
        rounds: cfg.iterations,
        alignment: crate::dpo::AlignmentConfig {
            mode: AlignMode::Pair,
            ..base.alignment.clone()
        },
        ..base.clone()
    };
    let iters = run_self_play(initial, pairs, eval_pairs, &sp, None, |_| {})?;
    for (i, (r, s)) in iters.reports.iter().zip(&iters.summaries).enumerate() {
        push(
            AblationRow::of("pair_dpo", n, i + 1, s.tuples, r),
            &mut rows,
        );
    }

    for &k in &cfg.n_values {
        if k == n && !iters.reports.is_empty() {
            let row = AblationRow::of(
                "n_sweep",
                k,
                1,
                iters.summaries[0].tuples,
                &iters.reports[0],
            );
            push(row, &mut rows);
            continue;
        }
        let ccfg = CurationConfig {
            n: k,
            ..base.curation.clone()
        };
        if ccfg.validate().is_err() {
            push(AblationRow::of("n_sweep", k, 1, 0, &baseline), &mut rows);
            continue;
        }
        let row = match curate_dataset(initial, pairs, &ccfg, 0) {
            Ok(c) => {
                let out = align_run(initial, &c.tuples, &sp.alignment, |_| {})?;
                let r = gap_report(&out.params, eval_pairs, &base.eval)?;
                AblationRow::of("n_sweep", k, 1, c.tuples.len(), &r)
            }
            Err(Error::CurationFailure { .. }) => AblationRow::of("n_sweep", k, 1, 0, &baseline),
            Err(e) => return Err(e),
        };
        push(row, &mut rows);
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["mode", "n", "round", "und", "gen", "gap"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.mode.clone(),
            r.n.to_string(),
            r.round.to_string(),
            r.und.to_string(),
            r.gen.to_string(),
            r.gap.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<(String, usize, usize, f64, f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|rec| rec.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Contract(format!("csv: {e}"))
}
