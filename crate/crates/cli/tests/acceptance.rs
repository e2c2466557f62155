//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full default pipeline (data, pretraining, three self-play
//! rounds) once, so expect roughly twenty minutes on one core.

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Result};
use pairalign_cli::commands::{self, IterateArgs, PretrainArgs};
use pairalign_cli::config::RunConfig;
use pairalign_cli::run::RunDir;
use pairalign_core::curation::{
    curate_dataset, similarity, CurationConfig, HomologousPreferenceTuple,
};
use pairalign_core::dpo::{
    evaluate_batch, loss_graph, margins, reference_logprobs, Objective, PairForm, Side,
};
use pairalign_core::gap::GapReport;
use pairalign_core::model::checkpoint;
use pairalign_core::model::{
    answer_questions, nll_var, BoundParams, ModelConfig, ModelParams, ReferenceSnapshot,
    SequenceLayout,
};
use pairalign_core::self_play::{round_dir, update_gen_pair, update_und_pair, PREFS_FILE};
use pairalign_core::vocab::{self, word, Token};
use pairalign_core::world::{
    generate_pairs, parse, read_jsonl, render, Caption, Color, HomologousPair, ImageTokens, Object,
    Scene, Shape, WorldConfig,
};
use pairalign_core::Error;
use pairalign_tensor::{gradcheck, Graph, Var};

type Outcome = Result<(bool, String)>;

fn tensor_err(e: Error) -> pairalign_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn tuple(i: usize, pair: &HomologousPair, other: &HomologousPair) -> HomologousPreferenceTuple {
    HomologousPreferenceTuple {
        pair_index: i,
        round: 0,
        seed: 0,
        caption_seed: 0,
        image_seed: 0,
        x: pair.image.clone(),
        y: pair.caption.clone(),
        qa: pair.qa.clone(),
        y_w: pair.caption.clone(),
        y_l: other.caption.clone(),
        s_w: 1.0,
        s_l: 0.0,
        x_w: pair.image.clone(),
        x_l: other.image.clone(),
        acc_w: 1.0,
        acc_l: 0.0,
        answers_w: vec![],
        answers_l: vec![],
        caption_candidates: vec![],
        caption_scores: vec![],
        image_candidates: vec![],
        image_answers: vec![],
    }
}

fn tuples(n: usize, seed: u64) -> Vec<HomologousPreferenceTuple> {
    let ps = generate_pairs(&WorldConfig::default(), n + 1, seed);
    (0..n).map(|i| tuple(i, &ps[i], &ps[i + 1])).collect()
}

fn tiny_configs() -> Vec<(ModelConfig, u64)> {
    let base = ModelConfig {
        init_std: 0.3,
        ..ModelConfig::default()
    };
    [
        (8, 1, 1, 2),
        (16, 2, 1, 2),
        (16, 2, 2, 1),
        (12, 3, 2, 2),
        (8, 2, 3, 1),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (d, h, l, m))| {
        (
            ModelConfig {
                d_model: d,
                n_heads: h,
                n_layers: l,
                mlp_mult: m,
                ..base.clone()
            },
            100 + i as u64,
        )
    })
    .collect()
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for (cfg, seed) in tiny_configs() {
        let p = ModelParams::init(cfg.clone(), seed)?;
        let r = ModelParams::init(cfg.clone(), seed + 50)?;
        let ts = tuples(2, seed);
        let batch: Vec<&HomologousPreferenceTuple> = ts.iter().collect();
        let pairs = generate_pairs(&WorldConfig::default(), 2, seed);
        let layouts = [
            SequenceLayout::understanding(&pairs[0].image, &pairs[0].caption),
            SequenceLayout::generation(&pairs[1].caption, &pairs[1].image),
            SequenceLayout::vqa(
                &pairs[0].image,
                &pairs[0].qa[0].question,
                pairs[0].qa[0].answer,
            ),
        ];
        let nll = |g: &mut Graph, vars: &[Var]| {
            let bound = BoundParams {
                vars: vars.to_vec(),
            };
            nll_var(g, &cfg, &bound, &layouts.iter().collect::<Vec<_>>()).map_err(tensor_err)
        };
        let rep = gradcheck::check(&p.tensors, nll, 64, 1e-5, seed)?;
        worst = worst.max(rep.max_error());
        coords += rep.coords.len();
        for objective in [
            Objective::Dpo(Side::Und),
            Objective::Dpo(Side::Gen),
            Objective::Pair(PairForm::Sum),
            Objective::Pair(PairForm::Product),
        ] {
            let rl = reference_logprobs(&r, &batch, objective.sides())?;
            let f = |g: &mut Graph, vars: &[Var]| {
                let bound = BoundParams {
                    vars: vars.to_vec(),
                };
                loss_graph(g, &cfg, &bound, &batch, &rl, 0.2, objective)
                    .map(|(l, _)| l)
                    .map_err(tensor_err)
            };
            let rep = gradcheck::check(&p.tensors, f, 64, 1e-5, seed + 7)?;
            worst = worst.max(rep.max_error());
            coords += rep.coords.len();
        }
    }
    let elapsed = start.elapsed();
    Ok((
        worst < 1e-6 && elapsed < Duration::from_secs(120),
        format!(
            "max rel err {worst:.2e} over {coords} coords, {:.1}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn c2_identities() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let mut worst_loss: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for (cfg, seed) in tiny_configs() {
        let p = ModelParams::init(cfg, seed)?;
        let r = ReferenceSnapshot::of(&p);
        let ts = tuples(3, seed);
        let b: Vec<&HomologousPreferenceTuple> = ts.iter().collect();
        for (objective, expect) in [
            (Objective::Dpo(Side::Und), ln2),
            (Objective::Dpo(Side::Gen), ln2),
            (Objective::Pair(PairForm::Sum), 2.0 * ln2),
            (Objective::Pair(PairForm::Product), ln2),
        ] {
            let with_grads = objective == Objective::Pair(PairForm::Product);
            let e = evaluate_batch(&p, &r, &b, 0.2, objective, with_grads)?;
            worst_loss = worst_loss.max((e.loss - expect).abs());
            if let Some(gs) = e.grads {
                for g in gs {
                    worst_grad = g.data().iter().fold(worst_grad, |m, x| m.max(x.abs()));
                }
            }
        }
    }
    Ok((
        worst_loss <= 1e-9 && worst_grad < 1e-12,
        format!("max |loss - identity| {worst_loss:.2e}, product-form max |grad| {worst_grad:.2e}"),
    ))
}

fn c3_curation(params: &ModelParams, first: &[HomologousPreferenceTuple]) -> Outcome {
    let mut all: Vec<HomologousPreferenceTuple> = first.to_vec();
    let cfg = CurationConfig::default();
    let mut batch_seed = 1000;
    while all.len() < 1000 {
        let pairs = generate_pairs(&WorldConfig::default(), 1000, batch_seed);
        all.extend(curate_dataset(params, &pairs, &cfg, 0)?.tuples);
        batch_seed += 1;
    }
    all.truncate(1000);
    let mut bad = 0;
    for t in &all {
        let s = |c: &Caption| {
            if c.0.is_empty() {
                Ok(0.0)
            } else {
                similarity(c, &t.y)
            }
        };
        let ok_s = s(&t.y_w)? >= s(&t.y_l)? && s(&t.y_w)? == t.s_w && s(&t.y_l)? == t.s_l;
        // accuracy recount: re-ask the model, count matches by hand
        let qs: Vec<Vec<Token>> = t.qa.iter().map(|q| q.question.clone()).collect();
        let recount = |img: &ImageTokens| -> Result<f64> {
            let ans = answer_questions(params, img, &qs)?;
            let hits = ans
                .iter()
                .zip(&t.qa)
                .filter(|(a, q)| **a == q.answer)
                .count();
            Ok(hits as f64 / t.qa.len() as f64)
        };
        let (aw, al) = (recount(&t.x_w)?, recount(&t.x_l)?);
        let ok_a = aw == t.acc_w && al == t.acc_l && t.acc_w >= t.acc_l && t.acc_w > 0.6;
        if !(ok_s && ok_a) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{} tuples, {bad} violations", all.len())))
}

fn c4_update_rule() -> Outcome {
    let rule = |s_w: f64, s_best: f64| if s_best > s_w { (2, 0) } else { (2, 1) };
    let caps = [Caption(vec![30]), Caption(vec![31]), Caption(vec![32])];
    let imgs = [
        ImageTokens(vec![7; 16]),
        ImageTokens(vec![8; 16]),
        ImageTokens(vec![9; 16]),
    ];
    let (mut cases, mut agree) = (0, 0);
    let grid: Vec<f64> = (0..=12).map(|k| k as f64 / 12.0).collect();
    for &s_w in &grid {
        for &s_b in &grid {
            let (w, l) = update_und_pair((&caps[0], &caps[1], s_w), &caps[2], s_b);
            let (ew, el) = rule(s_w, s_b);
            cases += 1;
            agree += (w == caps[ew] && l == caps[el]) as usize;
        }
    }
    for kw in 0..=6 {
        for kb in 0..=6 {
            let (a_w, a_b) = (kw as f64 / 6.0, kb as f64 / 6.0);
            let got = update_gen_pair((&imgs[0], &imgs[1], a_w), &imgs[2], a_b, 0.6);
            let expect = (a_b > 0.6).then(|| {
                let (ew, el) = rule(a_w, a_b);
                (imgs[ew].clone(), imgs[el].clone())
            });
            cases += 1;
            agree += (got == expect) as usize;
        }
    }
    Ok((
        agree == cases,
        format!("{agree}/{cases} branch cases agree"),
    ))
}

fn brute_force(image: &ImageTokens, q: &[Token], grid: usize) -> Token {
    let objs: Vec<(usize, usize, Shape, Color)> = image
        .tokens()
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            Shape::ALL
                .into_iter()
                .flat_map(|s| Color::ALL.into_iter().map(move |c| (s, c)))
                .find(|&(s, c)| vocab::cell_token(s, c) == t)
                .map(|(s, c)| (i / grid, i % grid, s, c))
        })
        .collect();
    let shape = |t: Token| {
        Shape::ALL
            .into_iter()
            .find(|s| vocab::shape_word(*s) == t)
            .unwrap()
    };
    let color = |t: Token| {
        Color::ALL
            .into_iter()
            .find(|c| vocab::color_word(*c) == t)
            .unwrap()
    };
    let yn = |b: bool| word(if b { "yes" } else { "no" });
    let first = |s: Shape| objs.iter().find(|o| o.2 == s);
    let w: Vec<&str> = q.iter().map(|t| vocab::word_str(*t).unwrap()).collect();
    match w.as_slice() {
        ["is", "there", "a", _, _] => yn(objs
            .iter()
            .any(|o| o.2 == shape(q[4]) && o.3 == color(q[3]))),
        ["how", "many", _] => match objs.iter().filter(|o| o.2 == shape(q[2])).count() {
            n @ 0..=3 => word(["0", "1", "2", "3"][n]),
            _ => word("no"),
        },
        ["what", "color", "is", "the", _] => {
            first(shape(q[4])).map_or(word("no"), |o| vocab::color_word(o.3))
        }
        ["is", "the", _, rel, ..] => match (first(shape(q[2])), first(shape(*q.last().unwrap()))) {
            (Some(a), Some(b)) => yn(match *rel {
                "left" => a.1 < b.1,
                "right" => a.1 > b.1,
                "above" => a.0 < b.0,
                _ => a.0 > b.0,
            }),
            _ => word("no"),
        },
        _ => panic!("unknown question {w:?}"),
    }
}

fn c5_world() -> Outcome {
    let grid = 4;
    let kinds: Vec<(Shape, Color)> = Shape::ALL
        .into_iter()
        .flat_map(|s| Color::ALL.into_iter().map(move |c| (s, c)))
        .collect();
    let obj = |(shape, color): (Shape, Color), cell: usize| Object {
        shape,
        color,
        row: cell / grid,
        col: cell % grid,
    };
    let mut scenes = vec![Scene::new(grid, vec![])?];
    for a in 0..grid * grid {
        for &ka in &kinds {
            scenes.push(Scene::new(grid, vec![obj(ka, a)])?);
            for b in a + 1..grid * grid {
                for &kb in &kinds {
                    scenes.push(Scene::new(grid, vec![obj(ka, a), obj(kb, b)])?);
                }
            }
        }
    }
    let mut round_trip = 0;
    for s in &scenes {
        round_trip += (parse(&render(s), grid)? == *s) as usize;
    }
    let distinct: HashSet<ImageTokens> = scenes.iter().map(render).collect();

    let pairs = generate_pairs(&WorldConfig::default(), 500, 77);
    let (mut cases, mut agree) = (0, 0);
    for (i, p) in pairs.iter().enumerate() {
        let qa = &p.qa[i % p.qa.len()];
        cases += 1;
        agree += (qa.answer == brute_force(&p.image, &qa.question, grid)) as usize;
    }
    Ok((
        round_trip == scenes.len() && distinct.len() == scenes.len() && agree == cases,
        format!(
            "parse∘render {round_trip}/{} scenes, oracle {agree}/{cases} cases",
            scenes.len()
        ),
    ))
}

struct Pipeline {
    dir: RunDir,
    baseline: GapReport,
    rounds: Vec<GapReport>,
    elapsed: Duration,
    round1_elapsed: Duration,
}

fn pipeline(root: &Path) -> Result<Pipeline> {
    let cfg = RunConfig::default();
    let dir = RunDir::resolve(Some(root), &cfg.run.name);
    let start = Instant::now();
    commands::gen_data(&cfg, &dir, false)?;
    commands::pretrain(
        &cfg,
        &dir,
        &PretrainArgs {
            data: None,
            resume: false,
            until: None,
            save_every: None,
        },
        false,
    )?;
    let pretrained = start.elapsed();
    let iter_start = Instant::now();
    let inputs = IterateArgs {
        checkpoint: None,
        data: None,
        eval_data: None,
    };
    commands::iterate(&cfg, &dir, &inputs, false)?;
    let out = dir.iterate();
    let baseline = GapReport::read(&out.join("baseline").join("gap.json"))?;
    let rounds = (0..cfg.self_play.rounds)
        .map(|k| GapReport::read(&round_dir(&out, k).join("gap.json")))
        .collect::<pairalign_core::Result<Vec<_>>>()?;
    // rounds cost about the same, so one round is the loop time over the round count
    let iter = iter_start.elapsed();
    Ok(Pipeline {
        dir,
        baseline,
        rounds,
        elapsed: start.elapsed(),
        round1_elapsed: pretrained + iter / cfg.self_play.rounds as u32,
    })
}

fn c6_gap(p: &Pipeline) -> Outcome {
    let (b, r) = (&p.baseline, &p.rounds[0]);
    let rel = (b.gap - r.gap) / b.gap;
    let und_drop = b.understanding_score - r.understanding_score;
    let pass = b.gap > 0.0
        && rel >= 0.3
        && und_drop <= 0.02
        && p.round1_elapsed < Duration::from_secs(30 * 60);
    Ok((
        pass,
        format!(
            "gap {:.4} -> {:.4} ({:+.1}% reduction), und {:.4} -> {:.4}, gen {:.4} -> {:.4}, {:.0}s",
            b.gap,
            r.gap,
            100.0 * rel,
            b.understanding_score,
            r.understanding_score,
            b.generation_score,
            r.generation_score,
            p.round1_elapsed.as_secs_f64()
        ),
    ))
}

fn c7_rounds(p: &Pipeline) -> Outcome {
    let mut prev = p.baseline.gap;
    let mut red = Vec::new();
    for r in &p.rounds {
        red.push(prev - r.gap);
        prev = r.gap;
    }
    let pass = red.windows(2).all(|w| w[0] >= w[1]);
    let text: Vec<String> = red.iter().map(|x| format!("{x:+.4}")).collect();
    Ok((
        pass,
        format!("per-round gap reductions {}", text.join(", ")),
    ))
}

fn c8_margins(p: &Pipeline) -> Outcome {
    let cfg = RunConfig::default();
    let initial = checkpoint::load_params(&p.dir.pretrain())?;
    let r0 = round_dir(&p.dir.iterate(), 0);
    let aligned = checkpoint::load_params(&r0)?;
    let data: Vec<HomologousPreferenceTuple> = read_jsonl(&r0.join(PREFS_FILE))?;
    let m = margins(
        &aligned,
        &ReferenceSnapshot::of(&initial),
        &data,
        cfg.alignment.beta,
    )?;
    let n = m.len() as f64;
    let mean = |f: fn(&(f64, f64)) -> f64| m.iter().map(f).sum::<f64>() / n;
    let pos = |f: fn(&(f64, f64)) -> f64| m.iter().filter(|x| f(x) > 0.0).count() as f64 / n;
    let (mu, mg, pu, pg) = (mean(|x| x.0), mean(|x| x.1), pos(|x| x.0), pos(|x| x.1));
    Ok((
        mu > 0.0 && mg > 0.0 && pu >= 0.9 && pg >= 0.9,
        format!(
            "{} tuples: mean Δ_und {mu:.3} ({:.1}% > 0), mean Δ_gen {mg:.3} ({:.1}% > 0)",
            m.len(),
            100.0 * pu,
            100.0 * pg
        ),
    ))
}

fn small_pipeline(root: &Path) -> Result<RunDir> {
    let sets: Vec<String> = [
        "model.d_model=16",
        "model.mlp_mult=2",
        "pretrain.steps=200",
        "pretrain.batch_size=8",
        "pretrain.learning_rate=0.01",
        "pretrain.task_mix=[1,3,1]",
        "curation.gen_accuracy_threshold=0.1",
        "alignment.steps=5",
        "alignment.batch_size=2",
        "self_play.rounds=2",
        "model.init_std=0.3",
        "data.train_pairs=64",
        "data.eval_pairs=6",
        "run.seed=9",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let cfg = RunConfig::resolve(None, &sets)?;
    let dir = RunDir::resolve(Some(root), &cfg.run.name);
    commands::gen_data(&cfg, &dir, false)?;
    let args = PretrainArgs {
        data: None,
        resume: false,
        until: None,
        save_every: None,
    };
    commands::pretrain(&cfg, &dir, &args, false)?;
    let inputs = IterateArgs {
        checkpoint: None,
        data: None,
        eval_data: None,
    };
    commands::iterate(&cfg, &dir, &inputs, false)?;
    Ok(dir)
}

fn c9_reproducible(tmp: &Path) -> Outcome {
    let a = small_pipeline(&tmp.join("repro_a"))?;
    let b = small_pipeline(&tmp.join("repro_b"))?;
    let mut files = vec![
        "data/train.jsonl".to_string(),
        "data/eval.jsonl".into(),
        "pretrain/checkpoint.bin".into(),
        "iterate/baseline/gap.json".into(),
    ];
    for k in 0..2 {
        for f in [PREFS_FILE, "gap.json", checkpoint::BLOB_FILE] {
            files.push(format!("iterate/round_{k}/{f}"));
        }
    }
    let mut differ = Vec::new();
    for f in &files {
        let (x, y) = (
            std::fs::read(a.root.join(f))?,
            std::fs::read(b.root.join(f))?,
        );
        if x != y {
            differ.push(f.clone());
        }
    }
    Ok((
        differ.is_empty(),
        format!(
            "{} artifacts compared, differing: {:?}",
            files.len(),
            differ
        ),
    ))
}

fn report(n: usize, name: &str, outcome: Outcome) -> bool {
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e:#}")));
    println!(
        "criterion {n} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut passed = 0;
    passed += report(1, "gradient correctness", c1_gradients()) as usize;
    passed += report(2, "loss identities at the reference", c2_identities()) as usize;
    passed += report(4, "self-play update rule", c4_update_rule()) as usize;
    passed += report(5, "toy-world oracle soundness", c5_world()) as usize;
    passed += report(9, "reproducibility", c9_reproducible(tmp.path())) as usize;

    match pipeline(&tmp.path().join("main")) {
        Ok(p) => {
            let data: Result<Vec<HomologousPreferenceTuple>> =
                read_jsonl(&round_dir(&p.dir.iterate(), 0).join(PREFS_FILE))
                    .map_err(|e| anyhow!(e));
            let params = checkpoint::load_params(&p.dir.pretrain()).map_err(|e| anyhow!(e));
            let c3 = data.and_then(|d| params.and_then(|pp| c3_curation(&pp, &d)));
            passed += report(3, "curation invariants", c3) as usize;
            passed += report(6, "end-to-end gap reduction", c6_gap(&p)) as usize;
            passed += report(7, "diminishing returns over rounds", c7_rounds(&p)) as usize;
            passed += report(8, "margin growth", c8_margins(&p)) as usize;
            println!("pipeline wall time {:.0}s", p.elapsed.as_secs_f64());
        }
        Err(e) => {
            for (n, name) in [
                (3, "curation invariants"),
                (6, "end-to-end gap reduction"),
                (7, "diminishing returns over rounds"),
                (8, "margin growth"),
            ] {
                report(n, name, Err(anyhow!("pipeline failed: {e:#}")));
            }
        }
    }
    println!("acceptance: {passed}/9 criteria pass");
}
