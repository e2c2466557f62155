mod common;

use common::{pairs, tiny_params};
use pairalign_core::curation::{
    accuracy, curate_dataset, curate_generation, curate_understanding, pair_seeds, rank_generation,
    score_captions, self_vqa_accuracy, self_vqa_responses, similarity, CurationConfig,
    HomologousPreferenceTuple,
};
use pairalign_core::model::sample_captions;
use pairalign_core::vocab::{self, Token};
use pairalign_core::world::{read_jsonl, write_jsonl, Caption, ImageTokens, QAPair, QuestionKind};
use pairalign_core::Error;
use proptest::prelude::*;

/// Independent multiset F1 by sorting and merging.
fn f1(a: &[Token], b: &[Token]) -> f64 {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

fn words() -> impl Strategy<Value = Vec<Token>> {
    prop::collection::vec(
        vocab::WORD_BASE..vocab::WORD_BASE + vocab::WORDS.len() as Token,
        1..20,
    )
}

proptest! {
    #[test]
    fn similarity_is_symmetric_bounded_and_matches_merge(a in words(), b in words()) {
        let (ca, cb) = (Caption(a.clone()), Caption(b.clone()));
        let s = similarity(&ca, &cb).unwrap();
        prop_assert_eq!(s, similarity(&cb, &ca).unwrap());
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - f1(&a, &b)).abs() < 1e-15);
        prop_assert_eq!(similarity(&ca, &ca).unwrap(), 1.0);
    }

    #[test]
    fn similarity_one_iff_same_multiset(a in words()) {
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(similarity(&Caption(a.clone()), &Caption(shuffled)).unwrap(), 1.0);
        let mut longer = a.clone();
        longer.push(a[0]);
        prop_assert!(similarity(&Caption(a), &Caption(longer)).unwrap() < 1.0);
    }
}

fn yes_no_qa(n: usize) -> Vec<QAPair> {
    (0..n)
        .map(|_| QAPair {
            question: vec![vocab::word("is")],
            answer: vocab::word("yes"),
            kind: QuestionKind::Presence,
        })
        .collect()
}

/// Responses with exactly `hits` correct answers out of `q`.
fn responses(q: usize, hits: usize) -> Vec<Token> {
    (0..q)
        .map(|i| {
            if i < hits {
                vocab::word("yes")
            } else {
                vocab::word("no")
            }
        })
        .collect()
}

#[test]
fn accuracy_counts_matches() {
    assert_eq!(accuracy(&responses(4, 3), &yes_no_qa(4)), 0.75);
}

#[test]
fn generation_ranking_examples() {
    let qa = yes_no_qa(10);
    let cap = Caption(vec![vocab::word("a")]);
    let imgs: Vec<ImageTokens> = (0..3)
        .map(|i| ImageTokens(vec![vocab::CELL_BASE + i; 16]))
        .collect();
    let p = rank_generation(
        &cap,
        imgs.clone(),
        vec![responses(10, 9), responses(10, 5), responses(10, 2)],
        &qa,
        0.6,
    )
    .unwrap();
    assert_eq!((p.x_w, p.x_l), (imgs[0].clone(), imgs[2].clone()));
    assert_eq!((p.acc_w, p.acc_l), (0.9, 0.2));
    // best accuracy 0.5 is not above the threshold
    assert!(rank_generation(
        &cap,
        imgs.clone(),
        vec![responses(10, 5), responses(10, 2), responses(10, 0)],
        &qa,
        0.6
    )
    .is_none());
    // exactly at the threshold is still a skip
    assert!(rank_generation(
        &cap,
        imgs.clone(),
        vec![responses(10, 6), responses(10, 2), responses(10, 0)],
        &qa,
        0.6
    )
    .is_none());
    // no spread
    assert!(rank_generation(&cap, imgs, vec![responses(10, 10); 3], &qa, 0.6).is_none());
}

#[test]
fn understanding_pair_equals_rescoring_of_candidates() {
    let p = tiny_params(1);
    let cfg = CurationConfig::default();
    for (i, pair) in pairs(8, 2).iter().enumerate() {
        let Some(u) = curate_understanding(&p, pair, &cfg, i as u64).unwrap() else {
            continue;
        };
        let again = sample_captions(&p, &pair.image, cfg.n, cfg.temperature, i as u64).unwrap();
        assert_eq!(u.candidates, again);
        let scores: Vec<f64> = again
            .iter()
            .map(|c| {
                if c.0.is_empty() {
                    0.0
                } else {
                    f1(&c.0, &pair.caption.0)
                }
            })
            .collect();
        let best = (0..scores.len()).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
        let worst = (0..scores.len()).fold(0, |b, k| if scores[k] < scores[b] { k } else { b });
        assert_eq!(u.y_w, again[best]);
        assert_eq!(u.y_l, again[worst]);
        assert!(u.s_w > u.s_l);
    }
}

#[test]
fn self_vqa_accuracy_equals_recount_of_responses() {
    let p = tiny_params(3);
    for pair in pairs(5, 4) {
        let r = self_vqa_responses(&p, &pair.image, &pair.qa).unwrap();
        let hits = r
            .iter()
            .zip(&pair.qa)
            .filter(|(a, q)| **a == q.answer)
            .count();
        assert_eq!(
            self_vqa_accuracy(&p, &pair.image, &pair.qa).unwrap(),
            hits as f64 / pair.qa.len() as f64
        );
    }
}

#[test]
fn curation_rejects_a_single_candidate() {
    let p = tiny_params(1);
    let cfg = CurationConfig {
        n: 1,
        ..CurationConfig::default()
    };
    let pair = &pairs(1, 1)[0];
    assert!(matches!(
        curate_understanding(&p, pair, &cfg, 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        curate_generation(&p, pair, &cfg, 0),
        Err(Error::Contract(_))
    ));
}

fn loose() -> CurationConfig {
    // an untrained model rarely answers well; a low bar keeps tuples coming
    CurationConfig {
        gen_accuracy_threshold: 0.1,
        seed: 7,
        ..CurationConfig::default()
    }
}

fn check_tuple(t: &HomologousPreferenceTuple, threshold: f64) {
    let s = |c: &Caption| {
        if c.0.is_empty() {
            0.0
        } else {
            f1(&c.0, &t.y.0)
        }
    };
    assert!(s(&t.y_w) >= s(&t.y_l));
    assert_eq!(s(&t.y_w), t.s_w);
    assert_eq!(s(&t.y_l), t.s_l);
    let recount = |a: &[Token]| {
        a.iter().zip(&t.qa).filter(|(r, q)| **r == q.answer).count() as f64 / t.qa.len() as f64
    };
    assert_eq!(recount(&t.answers_w), t.acc_w);
    assert_eq!(recount(&t.answers_l), t.acc_l);
    assert!(t.acc_w >= t.acc_l);
    assert!(t.acc_w > threshold);
}

#[test]
fn curated_tuples_satisfy_invariants_and_are_reproducible() {
    let p = tiny_params(5);
    let ps = pairs(12, 6);
    let cfg = loose();
    let a = curate_dataset(&p, &ps, &cfg, 0).unwrap();
    assert_eq!(a.tuples.len() + count_dropped(&a), ps.len());
    for t in &a.tuples {
        check_tuple(t, cfg.gen_accuracy_threshold);
        assert_eq!(t.x, ps[t.pair_index].image);
        assert_eq!(t.y, ps[t.pair_index].caption);
        assert_eq!(
            (t.caption_seed, t.image_seed),
            pair_seeds(cfg.seed, 0, t.pair_index)
        );
        let (_, scores) =
            score_captions(&p, &t.x, &t.y, cfg.n, cfg.temperature, t.caption_seed).unwrap();
        assert_eq!(scores, t.caption_scores);
    }
    let b = curate_dataset(&p, &ps, &cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_jsonl(&dir.path().join("a.jsonl"), &a.tuples).unwrap();
    write_jsonl(&dir.path().join("b.jsonl"), &b.tuples).unwrap();
    let bytes = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(bytes("a.jsonl"), bytes("b.jsonl"));
    let back: Vec<HomologousPreferenceTuple> = read_jsonl(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(back, a.tuples);
}

fn count_dropped(o: &pairalign_core::curation::CurationOutcome) -> usize {
    o.pairs - o.tuples.len()
}

#[test]
fn both_valid_halves_make_one_tuple_per_pair() {
    let p = tiny_params(5);
    let ps = pairs(12, 6);
    let out = curate_dataset(&p, &ps, &loose(), 0).unwrap();
    for t in &out.tuples {
        let pair = &ps[t.pair_index];
        let cfg = loose();
        assert!(curate_understanding(&p, pair, &cfg, t.caption_seed)
            .unwrap()
            .is_some());
        assert!(curate_generation(&p, pair, &cfg, t.image_seed)
            .unwrap()
            .is_some());
    }
    // every pair not in the output had a skipped half
    let kept: Vec<usize> = out.tuples.iter().map(|t| t.pair_index).collect();
    for (i, pair) in ps.iter().enumerate().filter(|(i, _)| !kept.contains(i)) {
        let (cs, is) = pair_seeds(loose().seed, 0, i);
        let u = curate_understanding(&p, pair, &loose(), cs).unwrap();
        let g = curate_generation(&p, pair, &loose(), is).unwrap();
        assert!(u.is_none() || g.is_none());
    }
}

#[test]
fn nothing_surviving_is_a_curation_failure() {
    let p = tiny_params(5);
    let cfg = CurationConfig {
        gen_accuracy_threshold: 0.999,
        ..CurationConfig::default()
    };
    match curate_dataset(&p, &pairs(4, 6), &cfg, 0) {
        Err(Error::CurationFailure {
            pairs, gen_skipped, ..
        }) => {
            assert_eq!(pairs, 4);
            assert_eq!(gen_skipped, 4);
        }
        other => panic!("{other:?}"),
    }
}
