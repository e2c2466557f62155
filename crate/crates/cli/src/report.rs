//! Aggregates every `gap.json` and `ablation.csv` under a run directory into
//! `report.md` and `report.csv`. Output depends only on the artifacts, so
//! re-running it is idempotent.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pairalign_core::ablation::read_csv;
use pairalign_core::gap::GapReport;
use serde_json::{json, Value};

pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";
pub const CSV_HEADER: [&str; 7] = [
    "source",
    "understanding_score",
    "generation_score",
    "gap",
    "pairs",
    "questions",
    "checkpoint_hash",
];

fn find(root: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find(&path, name, out)?;
        } else if path.file_name().is_some_and(|f| f == name) {
            out.push(path);
        }
    }
    Ok(())
}

fn source(root: &Path, path: &Path) -> String {
    let rel = path
        .parent()
        .unwrap_or(path)
        .strip_prefix(root)
        .unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn write(root: &Path) -> Result<Value> {
    if !root.is_dir() {
        bail!("run directory {} does not exist", root.display());
    }
    let mut gaps = Vec::new();
    find(root, "gap.json", &mut gaps)?;
    let mut ablations = Vec::new();
    find(root, "ablation.csv", &mut ablations)?;
    if gaps.is_empty() && ablations.is_empty() {
        bail!("no gap.json or ablation.csv under {}", root.display());
    }
    gaps.sort();
    ablations.sort();
    let reports: Vec<(String, GapReport)> = gaps
        .iter()
        .map(|p| {
            Ok((
                source(root, p),
                GapReport::read(p).with_context(|| format!("reading {}", p.display()))?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut csv = csv::Writer::from_path(root.join(REPORT_CSV))?;
    csv.write_record(CSV_HEADER)?;
    for (src, r) in &reports {
        csv.write_record([
            src.clone(),
            r.understanding_score.to_string(),
            r.generation_score.to_string(),
            r.gap.to_string(),
            r.pairs.to_string(),
            r.questions.to_string(),
            r.checkpoint_hash.clone().unwrap_or_default(),
        ])?;
    }
    csv.flush()?;

    let mut md = String::from("# Run report\n\n## Gap\n\n| source | understanding | generation | gap |\n|---|---|---|---|\n");
    for (src, r) in &reports {
        writeln!(
            md,
            "| {src} | {:.3} | {:.3} | {:.3} |",
            r.understanding_score, r.generation_score, r.gap
        )?;
    }

    let baseline = reports
        .iter()
        .find(|(s, _)| s.ends_with("baseline"))
        .map(|(_, r)| r.gap);
    let rounds: Vec<&(String, GapReport)> = reports
        .iter()
        .filter(|(s, _)| {
            s.rsplit('/')
                .next()
                .is_some_and(|l| l.starts_with("round_"))
        })
        .collect();
    if let (Some(base), false) = (baseline, rounds.is_empty()) {
        md.push_str(
            "\n## Self-play rounds\n\n| round | gap | reduction vs previous |\n|---|---|---|\n",
        );
        let mut prev = base;
        writeln!(md, "| baseline | {base:.3} | |")?;
        for (src, r) in rounds {
            writeln!(
                md,
                "| {} | {:.3} | {:.3} |",
                src.rsplit('/').next().unwrap_or(src),
                r.gap,
                prev - r.gap
            )?;
            prev = r.gap;
        }
    }

    for path in &ablations {
        let rows = read_csv(path)?;
        writeln!(
            md,
            "\n## Ablation ({})\n\n| mode | n | round | understanding | generation | gap |\n|---|---|---|---|---|---|",
            source(root, path)
        )?;
        for (mode, n, round, und, gen, gap) in rows {
            writeln!(
                md,
                "| {mode} | {n} | {round} | {und:.3} | {gen:.3} | {gap:.3} |"
            )?;
        }
    }
    std::fs::write(root.join(REPORT_MD), &md)?;
    Ok(json!({
        "gap_reports": reports.len(),
        "ablations": ablations.len(),
        "markdown": root.join(REPORT_MD),
        "csv": root.join(REPORT_CSV),
    }))
}
