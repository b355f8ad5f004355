use std::collections::{BTreeMap, HashSet};

use adaptmt::model::{LangCode, TermPair};
use adaptmt::terminology::{compile_glossary, match_terms, Glossary, GlossaryOptions, Stopwords};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SRC: &[&str] = &[
    "engine",
    "brake",
    "brake pad",
    "front brake pad",
    "oil",
    "oil filter",
    "the",
    "tyre",
    "spark plug",
    "gear box",
];
const TGT: &[&str] = &[
    "Motor",
    "Bremse",
    "Bremsbelag",
    "Öl",
    "Ölfilter",
    "der",
    "Reifen",
    "Zündkerze",
    "Getriebe",
];

fn langs() -> (LangCode, LangCode) {
    (LangCode::from_code("en").unwrap(), LangCode::from_code("de").unwrap())
}

fn corpus(seed: u64) -> Vec<TermPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..400)
        .map(|_| {
            let s = SRC[rng.random_range(0..SRC.len())];
            let t = TGT[rng.random_range(0..TGT.len())];
            TermPair::with_frequency(s, t, rng.random_range(1..3)).unwrap()
        })
        .collect()
}

/// Sort all (count, target) candidates per source and take the head.
fn oracle(occ: &[TermPair], stop: &HashSet<&str>, min_freq: u64, max_ngram: usize) -> Vec<(String, String, u64)> {
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for p in occ {
        *counts
            .entry((p.source_term.clone(), p.target_term.clone()))
            .or_default() += p.frequency as u64;
    }
    let mut per_src: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
    for ((s, t), n) in counts {
        if stop.contains(s.as_str()) || stop.contains(t.as_str()) || s.split(' ').count() > max_ngram {
            continue;
        }
        per_src.entry(s).or_default().push((n, t));
    }
    let mut out: Vec<(String, String, u64)> = per_src
        .into_iter()
        .filter_map(|(s, mut cands)| {
            cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let (n, t) = cands.swap_remove(0);
            (n >= min_freq).then_some((s, t, n))
        })
        .collect();
    out.sort_by(|a, b| {
        let la = a.0.split(' ').count();
        let lb = b.0.split(' ').count();
        lb.cmp(&la).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0))
    });
    out
}

fn triples(g: &Glossary) -> Vec<(String, String, u64)> {
    g.entries()
        .iter()
        .map(|e| (e.source_term.clone(), e.target_term.clone(), e.frequency as u64))
        .collect()
}

#[test]
fn compile_matches_oracle_on_three_corpora() {
    let (en, de) = langs();
    let stop = Stopwords::builtin(&en, &de);
    let stop_set: HashSet<&str> = ["the", "der"].into();
    for seed in [1, 2, 3] {
        let occ = corpus(seed);
        for (min_frequency, max_ngram) in [(2, 5), (20, 5), (2, 2)] {
            let opts = GlossaryOptions {
                min_frequency,
                max_ngram,
                drop_overlapping: false,
            };
            let g = compile_glossary(&occ, &stop, &opts, en.clone(), de.clone());
            assert_eq!(
                triples(&g),
                oracle(&occ, &stop_set, min_frequency as u64, max_ngram),
                "seed {seed} min {min_frequency} ngram {max_ngram}"
            );
        }
    }
}

#[test]
fn tsv_round_trip_on_compiled_glossary() {
    let (en, de) = langs();
    let g = compile_glossary(
        &corpus(5),
        &Stopwords::none(),
        &GlossaryOptions::default(),
        en.clone(),
        de.clone(),
    );
    let back = Glossary::from_tsv(&g.to_tsv(), en, de).unwrap();
    assert_eq!(triples(&back), triples(&g));
}

#[test]
fn longest_terms_match_first() {
    let (en, de) = langs();
    let g = compile_glossary(
        &corpus(1),
        &Stopwords::builtin(&en, &de),
        &GlossaryOptions::default(),
        en,
        de,
    );
    let m = match_terms("Replace the front brake pad and the oil filter.", &g, 10).unwrap();
    let srcs: Vec<&str> = m.iter().map(|t| t.source_term.as_str()).collect();
    assert_eq!(srcs[0], "front brake pad");
    for want in ["brake pad", "brake", "oil filter", "oil"] {
        assert!(srcs.contains(&want), "{want} missing from {srcs:?}");
    }
    assert!(!srcs.contains(&"engine"));
    let capped = match_terms("Replace the front brake pad and the oil filter.", &g, 2).unwrap();
    assert_eq!(capped, m[..2]);
}
