//! Term extraction parsing, glossary compilation and matching, and
//! term-usage evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LangCode, ModelError, TermPair};

/// Longest source n-gram kept in a glossary and considered by matching.
pub const MAX_NGRAM: usize = 5;
pub const MIN_FREQUENCY: u32 = 2;

#[derive(Debug, Error)]
pub enum TermError {
    #[error("no term pairs could be parsed ({skipped} lines skipped)")]
    NoTermsParsed { skipped: usize },
    #[error("inconsistent counts for {system}/{term_set}: used {used} of {total}")]
    InconsistentCounts {
        system: String,
        term_set: String,
        used: u64,
        total: u64,
    },
    #[error("separator is empty")]
    EmptySeparator,
    #[error("max_terms must be at least 1")]
    InvalidMaxTerms,
    #[error("invalid glossary: {0}")]
    InvalidGlossary(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTerms {
    pub terms: Vec<TermPair>,
    pub skipped: usize,
}

/// Parses one term pair per line from a numbered list such as
/// `1. fever = fiebre`. Numbering is optional and the text is split at the
/// first separator. Blank lines are ignored; other unusable lines are
/// counted in `skipped`.
pub fn parse_extracted_terms(llm_output: &str, separator: &str) -> Result<ParsedTerms, TermError> {
    if separator.is_empty() {
        return Err(TermError::EmptySeparator);
    }
    let numbering = Regex::new(r"^\s*\d+\s*[.)]\s*").expect("static regex");
    let mut terms = Vec::new();
    let mut skipped = 0;
    for line in llm_output.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let body = numbering.replace(line, "");
        let parsed = body.split_once(separator).and_then(|(s, t)| TermPair::new(s, t).ok());
        match parsed {
            Some(p) => terms.push(p),
            None => skipped += 1,
        }
    }
    if terms.is_empty() {
        return Err(TermError::NoTermsParsed { skipped });
    }
    Ok(ParsedTerms { terms, skipped })
}

/// Per-language stopword sets for the two sides of a glossary.
#[derive(Debug, Clone, Default)]
pub struct Stopwords {
    src: HashSet<String>,
    tgt: HashSet<String>,
}

const BUILTIN_STOPWORDS: &[(&str, &str)] = &[
    ("cs", include_str!("../data/stopwords/cs.txt")),
    ("de", include_str!("../data/stopwords/de.txt")),
    ("en", include_str!("../data/stopwords/en.txt")),
    ("es", include_str!("../data/stopwords/es.txt")),
    ("fr", include_str!("../data/stopwords/fr.txt")),
    ("it", include_str!("../data/stopwords/it.txt")),
    ("pt", include_str!("../data/stopwords/pt.txt")),
];

fn parse_stopword_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// The shipped list for a language, empty when none exists.
pub fn builtin_stopwords(lang: &LangCode) -> HashSet<String> {
    BUILTIN_STOPWORDS
        .iter()
        .find(|(c, _)| *c == lang.code())
        .map(|(_, t)| parse_stopword_list(t))
        .unwrap_or_default()
}

impl Stopwords {
    pub fn new(src: HashSet<String>, tgt: HashSet<String>) -> Self {
        let lower = |s: HashSet<String>| s.into_iter().map(|w| w.to_lowercase()).collect();
        Stopwords {
            src: lower(src),
            tgt: lower(tgt),
        }
    }

    pub fn none() -> Self {
        Stopwords::default()
    }

    pub fn builtin(src: &LangCode, tgt: &LangCode) -> Self {
        Stopwords {
            src: builtin_stopwords(src),
            tgt: builtin_stopwords(tgt),
        }
    }

    /// One token per line; `#` starts a comment line.
    pub fn load_file(path: &Path) -> Result<HashSet<String>, TermError> {
        let text = fs::read_to_string(path).map_err(|e| TermError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(parse_stopword_list(&text))
    }

    pub fn is_src_stopword(&self, term: &str) -> bool {
        self.src.contains(&term.trim().to_lowercase())
    }

    pub fn is_tgt_stopword(&self, term: &str) -> bool {
        self.tgt.contains(&term.trim().to_lowercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryOptions {
    pub min_frequency: u32,
    pub max_ngram: usize,
    /// Drop a term whose words appear contiguously inside a longer kept term.
    pub drop_overlapping: bool,
}

impl Default for GlossaryOptions {
    fn default() -> Self {
        GlossaryOptions {
            min_frequency: MIN_FREQUENCY,
            max_ngram: MAX_NGRAM,
            drop_overlapping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Glossary {
    entries: Vec<TermPair>,
    src_lang: LangCode,
    tgt_lang: LangCode,
}

fn glossary_order(a: &TermPair, b: &TermPair) -> std::cmp::Ordering {
    b.src_ngram_len
        .cmp(&a.src_ngram_len)
        .then(b.frequency.cmp(&a.frequency))
        .then_with(|| a.source_term.cmp(&b.source_term))
}

impl Glossary {
    /// Builds a glossary from already-compiled entries, checking the
    /// invariants and sorting.
    pub fn from_entries(mut entries: Vec<TermPair>, src_lang: LangCode, tgt_lang: LangCode) -> Result<Self, TermError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.source_term.clone()) {
                return Err(TermError::InvalidGlossary(format!(
                    "duplicate source term `{}`",
                    e.source_term
                )));
            }
            if e.frequency < MIN_FREQUENCY {
                return Err(TermError::InvalidGlossary(format!(
                    "`{}` has frequency {}",
                    e.source_term, e.frequency
                )));
            }
            if e.src_ngram_len > MAX_NGRAM {
                return Err(TermError::InvalidGlossary(format!(
                    "`{}` is longer than {MAX_NGRAM} words",
                    e.source_term
                )));
            }
        }
        entries.sort_by(glossary_order);
        Ok(Glossary {
            entries,
            src_lang,
            tgt_lang,
        })
    }

    pub fn empty(src_lang: LangCode, tgt_lang: LangCode) -> Self {
        Glossary {
            entries: Vec::new(),
            src_lang,
            tgt_lang,
        }
    }

    pub fn entries(&self) -> &[TermPair] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn src_lang(&self) -> &LangCode {
        &self.src_lang
    }

    pub fn tgt_lang(&self) -> &LangCode {
        &self.tgt_lang
    }

    /// `source<TAB>target<TAB>frequency` lines in stored order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.source_term, e.target_term, e.frequency));
        }
        out
    }

    pub fn from_tsv(text: &str, src_lang: LangCode, tgt_lang: LangCode) -> Result<Self, TermError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(TermError::InvalidGlossary(format!(
                    "line {}: expected 3 columns",
                    i + 1
                )));
            }
            let freq: u32 = cols[2]
                .trim()
                .parse()
                .map_err(|_| TermError::InvalidGlossary(format!("line {}: bad frequency", i + 1)))?;
            entries.push(TermPair::with_frequency(cols[0], cols[1], freq)?);
        }
        Self::from_entries(entries, src_lang, tgt_lang)
    }

    pub fn save(&self, path: &Path) -> Result<(), TermError> {
        let io = |e| TermError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_tsv().as_bytes()).map_err(io)
    }

    pub fn load(path: &Path, src_lang: LangCode, tgt_lang: LangCode) -> Result<Self, TermError> {
        let text = fs::read_to_string(path).map_err(|e| TermError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_tsv(&text, src_lang, tgt_lang)
    }
}

/// Compiles a glossary from extracted term occurrences. Each input pair
/// contributes its `frequency` to the count of its (source, target) pair.
/// Per source term the most frequent target wins, ties going to the
/// lexicographically smaller target; terms seen fewer than
/// `min_frequency` times are dropped.
pub fn compile_glossary(
    occurrences: &[TermPair],
    stopwords: &Stopwords,
    opts: &GlossaryOptions,
    src_lang: LangCode,
    tgt_lang: LangCode,
) -> Glossary {
    let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
    for p in occurrences {
        *counts
            .entry((p.source_term.as_str(), p.target_term.as_str()))
            .or_default() += u64::from(p.frequency);
    }
    let mut best: HashMap<&str, (&str, u64)> = HashMap::new();
    for ((s, t), n) in counts {
        if s.is_empty() || t.is_empty() || stopwords.is_src_stopword(s) || stopwords.is_tgt_stopword(t) {
            continue;
        }
        if s.split_whitespace().count() > opts.max_ngram {
            continue;
        }
        let slot = best.entry(s).or_insert((t, n));
        if n > slot.1 || (n == slot.1 && t < slot.0) {
            *slot = (t, n);
        }
    }
    let mut entries: Vec<TermPair> = best
        .into_iter()
        .filter(|(_, (_, n))| *n >= u64::from(opts.min_frequency))
        .filter_map(|(s, (t, n))| TermPair::with_frequency(s, t, n.min(u64::from(u32::MAX)) as u32).ok())
        .collect();
    entries.sort_by(glossary_order);
    if opts.drop_overlapping {
        entries = drop_overlapping_terms(entries);
    }
    Glossary {
        entries,
        src_lang,
        tgt_lang,
    }
}

fn drop_overlapping_terms(entries: Vec<TermPair>) -> Vec<TermPair> {
    let tokens: Vec<Vec<String>> = entries.iter().map(|e| normalize_words(&e.source_term)).collect();
    let keep: Vec<bool> = (0..entries.len())
        .map(|i| {
            !(0..entries.len()).any(|j| {
                j != i
                    && tokens[j].len() > tokens[i].len()
                    && tokens[j].windows(tokens[i].len()).any(|w| w == tokens[i].as_slice())
            })
        })
        .collect();
    entries
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e)
        .collect()
}

/// Lowercased words with leading and trailing punctuation removed.
fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Glossary entries whose source term occurs among the segment's word
/// 1..5-grams (case-folded, punctuation stripped), in glossary order, at
/// most `max_terms`. For unspaced scripts the lowercased term is looked up
/// as a substring.
pub fn match_terms(source: &str, glossary: &Glossary, max_terms: usize) -> Result<Vec<TermPair>, TermError> {
    terms_in_source(source, glossary.entries(), glossary.src_lang(), max_terms)
}

/// Same matching as [`match_terms`] over any list of candidate terms, kept
/// in the given order. Duplicate source terms are reported once.
pub fn terms_in_source(
    source: &str,
    candidates: &[TermPair],
    src_lang: &LangCode,
    max_terms: usize,
) -> Result<Vec<TermPair>, TermError> {
    if max_terms == 0 {
        return Err(TermError::InvalidMaxTerms);
    }
    let matched: Box<dyn Fn(&TermPair) -> bool> = if src_lang.is_spaced() {
        let words = normalize_words(source);
        let mut grams: HashSet<String> = HashSet::new();
        for n in 1..=MAX_NGRAM {
            for w in words.windows(n) {
                grams.insert(w.join(" "));
            }
        }
        Box::new(move |e: &TermPair| grams.contains(&normalize_words(&e.source_term).join(" ")))
    } else {
        let folded = source.to_lowercase();
        Box::new(move |e: &TermPair| folded.contains(&e.source_term.to_lowercase()))
    };
    let mut seen = HashSet::new();
    Ok(candidates
        .iter()
        .filter(|e| matched(e) && seen.insert(e.source_term.to_lowercase()))
        .take(max_terms)
        .cloned()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermMatchMode {
    /// Word boundaries for spaced scripts, substring otherwise.
    #[default]
    Auto,
    WordBoundary,
    Substring,
}

impl TermMatchMode {
    fn resolve(self, lang: Option<&LangCode>) -> TermMatchMode {
        match self {
            TermMatchMode::Auto => match lang {
                Some(l) if !l.is_spaced() => TermMatchMode::Substring,
                _ => TermMatchMode::WordBoundary,
            },
            m => m,
        }
    }
}

/// Case-insensitive check that the term's target side appears in the
/// translation, at word boundaries unless the mode says otherwise.
pub fn term_used(translation: &str, term: &TermPair) -> bool {
    term_used_with(translation, term, TermMatchMode::WordBoundary)
}

pub fn term_used_with(translation: &str, term: &TermPair, mode: TermMatchMode) -> bool {
    term_used_in_lang(translation, term, mode, None)
}

pub fn term_used_in_lang(translation: &str, term: &TermPair, mode: TermMatchMode, tgt_lang: Option<&LangCode>) -> bool {
    let hay = translation.to_lowercase();
    let needle = term.target_term.to_lowercase();
    if needle.is_empty() || hay.is_empty() {
        return false;
    }
    match mode.resolve(tgt_lang) {
        TermMatchMode::Substring => hay.contains(&needle),
        _ => hay.match_indices(&needle).any(|(i, m)| {
            let before = hay[..i].chars().next_back();
            let after = hay[i + m.len()..].chars().next();
            !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
        }),
    }
}

/// Terms from the set that the translation does not use. An empty result
/// means there is nothing to post-edit.
pub fn missing_terms(translation: &str, term_set: &[TermPair]) -> Vec<TermPair> {
    missing_terms_with(translation, term_set, TermMatchMode::WordBoundary, None)
}

pub fn missing_terms_with(
    translation: &str,
    term_set: &[TermPair],
    mode: TermMatchMode,
    tgt_lang: Option<&LangCode>,
) -> Vec<TermPair> {
    term_set
        .iter()
        .filter(|t| !term_used_in_lang(translation, t, mode, tgt_lang))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageCounts {
    pub total: u64,
    pub used: u64,
}

/// Counts required and used terms over (translation, term set) items.
pub fn count_usage<'a, I>(items: I, mode: TermMatchMode, tgt_lang: Option<&LangCode>) -> UsageCounts
where
    I: IntoIterator<Item = (&'a str, &'a [TermPair])>,
{
    let mut c = UsageCounts::default();
    for (translation, terms) in items {
        c.total += terms.len() as u64;
        c.used += terms
            .iter()
            .filter(|t| term_used_in_lang(translation, t, mode, tgt_lang))
            .count() as u64;
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRow {
    pub system: String,
    pub term_set: String,
    pub total: u64,
    pub used: u64,
}

impl UsageRow {
    pub fn new(system: &str, term_set: &str, used: u64, total: u64) -> Self {
        UsageRow {
            system: system.to_string(),
            term_set: term_set.to_string(),
            total,
            used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemUsage {
    pub system: String,
    /// Mean of the per-set percentages, rounded half-up to 2 decimals.
    pub avg_pct: f64,
    /// The same mean before rounding.
    pub avg_pct_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermUsageReport {
    pub rows: Vec<UsageRow>,
    pub systems: Vec<SystemUsage>,
}

impl TermUsageReport {
    pub fn avg_pct(&self, system: &str) -> Option<f64> {
        self.system(system).map(|s| s.avg_pct)
    }

    pub fn system(&self, system: &str) -> Option<&SystemUsage> {
        self.systems.iter().find(|s| s.system == system)
    }
}

/// Half-up rounding to 2 decimals, tolerant of binary representation error
/// just below a `.xx5` boundary.
pub fn round_pct(x: f64) -> f64 {
    let scaled = x * 100.0;
    let r = (scaled.abs() + 0.5 + 1e-7).floor();
    r.copysign(scaled) / 100.0
}

/// Per-system averages over term sets; systems appear in first-seen order.
pub fn usage_report(rows: Vec<UsageRow>) -> Result<TermUsageReport, TermError> {
    let mut order: Vec<String> = Vec::new();
    let mut pcts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        if r.used > r.total || r.total == 0 {
            return Err(TermError::InconsistentCounts {
                system: r.system.clone(),
                term_set: r.term_set.clone(),
                used: r.used,
                total: r.total,
            });
        }
        if !pcts.contains_key(&r.system) {
            order.push(r.system.clone());
        }
        pcts.entry(r.system.clone())
            .or_default()
            .push(100.0 * r.used as f64 / r.total as f64);
    }
    let systems = order
        .into_iter()
        .map(|s| {
            let v = &pcts[&s];
            let exact = v.iter().sum::<f64>() / v.len() as f64;
            SystemUsage {
                system: s,
                avg_pct: round_pct(exact),
                avg_pct_exact: exact,
            }
        })
        .collect();
    Ok(TermUsageReport { rows, systems })
}

/// Averages one system across several reports (e.g. language pairs), using
/// the unrounded per-report means. `None` when a report lacks the system.
pub fn cross_average(reports: &[&TermUsageReport], system: &str) -> Option<f64> {
    if reports.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for r in reports {
        sum += r.system(system)?.avg_pct_exact;
    }
    Some(round_pct(sum / reports.len() as f64))
}

/// Mean of already computed percentages, rounded half-up.
pub fn mean_pct(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| round_pct(values.iter().sum::<f64>() / values.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(c: &str) -> LangCode {
        LangCode::from_code(c).unwrap()
    }

    fn tp(s: &str, t: &str) -> TermPair {
        TermPair::new(s, t).unwrap()
    }

    fn occ(s: &str, t: &str, n: usize) -> Vec<TermPair> {
        vec![tp(s, t); n]
    }

    #[test]
    fn parse_numbered_lines() {
        let p = parse_extracted_terms("1. fever = fiebre\n2. cough = tos", "=").unwrap();
        assert_eq!(p.terms, vec![tp("fever", "fiebre"), tp("cough", "tos")]);
        assert_eq!(p.skipped, 0);
        let p = parse_extracted_terms(" fever = fiebre\n2. cough = tos\n3. fever =\nnoise", "=").unwrap();
        assert_eq!(p.terms.len(), 2);
        assert_eq!(p.skipped, 2);
        assert!(matches!(
            parse_extracted_terms("just some prose", "="),
            Err(TermError::NoTermsParsed { skipped: 1 })
        ));
        assert!(matches!(
            parse_extracted_terms("a = b", ""),
            Err(TermError::EmptySeparator)
        ));
    }

    #[test]
    fn compile_rules() {
        let en = lang("en");
        let es = lang("es");
        let mut input = occ("alpha", "x", 3);
        input.extend(occ("alpha", "y", 2));
        input.extend(occ("beta", "z", 1));
        input.extend(occ("acute viral infection", "infección viral aguda", 2));
        input.extend(occ("the", "el", 5));
        input.extend(occ("one two three four five six", "t", 4));
        let g = compile_glossary(
            &input,
            &Stopwords::builtin(&en, &es),
            &GlossaryOptions::default(),
            en,
            es,
        );
        let got: Vec<(&str, &str, u32)> = g
            .entries()
            .iter()
            .map(|e| (e.source_term.as_str(), e.target_term.as_str(), e.frequency))
            .collect();
        assert_eq!(
            got,
            vec![("acute viral infection", "infección viral aguda", 2), ("alpha", "x", 3)]
        );
    }

    #[test]
    fn tie_goes_to_smaller_target() {
        let mut input = occ("k", "b", 2);
        input.extend(occ("k", "a", 2));
        let g = compile_glossary(
            &input,
            &Stopwords::none(),
            &GlossaryOptions::default(),
            lang("en"),
            lang("de"),
        );
        assert_eq!(g.entries()[0].target_term, "a");
    }

    #[test]
    fn overlapping_flag() {
        let mut input = occ("viral infection", "infección viral", 2);
        input.extend(occ("infection", "infección", 3));
        input.extend(occ("fever", "fiebre", 2));
        let opts = GlossaryOptions {
            drop_overlapping: true,
            ..Default::default()
        };
        let g = compile_glossary(&input, &Stopwords::none(), &opts, lang("en"), lang("es"));
        let src: Vec<&str> = g.entries().iter().map(|e| e.source_term.as_str()).collect();
        assert_eq!(src, vec!["viral infection", "fever"]);
        let g = compile_glossary(
            &input,
            &Stopwords::none(),
            &GlossaryOptions::default(),
            lang("en"),
            lang("es"),
        );
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn matching_ngrams_and_truncation() {
        let entries = vec![
            TermPair::with_frequency("viral infection", "infección viral", 2).unwrap(),
            TermPair::with_frequency("fever", "fiebre", 4).unwrap(),
            TermPair::with_frequency("cough", "tos", 3).unwrap(),
        ];
        let g = Glossary::from_entries(entries, lang("en"), lang("es")).unwrap();
        let m = match_terms("Acute viral infection, with Fever.", &g, 10).unwrap();
        let src: Vec<&str> = m.iter().map(|e| e.source_term.as_str()).collect();
        assert_eq!(src, vec!["viral infection", "fever"]);
        assert_eq!(
            match_terms("Acute viral infection, with Fever.", &g, 1).unwrap().len(),
            1
        );
        assert!(match_terms("nothing here", &Glossary::empty(lang("en"), lang("es")), 5)
            .unwrap()
            .is_empty());
        assert!(matches!(match_terms("x", &g, 0), Err(TermError::InvalidMaxTerms)));
    }

    #[test]
    fn unspaced_source_uses_substring() {
        let g = Glossary::from_entries(
            vec![TermPair::with_frequency("病毒", "virus", 2).unwrap()],
            lang("zh"),
            lang("en"),
        )
        .unwrap();
        assert_eq!(match_terms("这是一种病毒感染", &g, 5).unwrap().len(), 1);
    }

    #[test]
    fn term_used_cases() {
        let t = tp("pruebas serológicas", "serological tests");
        assert!(term_used("The serological tests were run", &t));
        assert!(!term_used("serum tests", &t));
        assert!(term_used("Serological Tests", &t));
        assert!(!term_used("nonserological tests", &t));
        let zh = tp("virus", "病毒");
        assert!(term_used_in_lang(
            "这是病毒。",
            &zh,
            TermMatchMode::Auto,
            Some(&lang("zh"))
        ));
        assert!(!term_used("", &t));
    }

    #[test]
    fn missing_terms_cases() {
        let set = vec![tp("fever", "fiebre"), tp("cough", "tos"), tp("rash", "sarpullido")];
        assert!(missing_terms("fiebre, tos y sarpullido", &set).is_empty());
        assert_eq!(missing_terms("fiebre y tos", &set), vec![tp("rash", "sarpullido")]);
        assert!(missing_terms("anything", &[]).is_empty());
    }

    #[test]
    fn report_basics() {
        let r = usage_report(vec![
            UsageRow::new("Baseline", "1", 291, 432),
            UsageRow::new("Baseline", "2", 168, 317),
        ])
        .unwrap();
        assert_eq!(r.avg_pct("Baseline"), Some(60.18));
        let r = usage_report(vec![UsageRow::new("s", "1", 0, 10), UsageRow::new("s", "2", 0, 10)]).unwrap();
        assert_eq!(r.avg_pct("s"), Some(0.0));
        assert!(matches!(
            usage_report(vec![UsageRow::new("s", "1", 11, 10)]),
            Err(TermError::InconsistentCounts { .. })
        ));
        assert_eq!(mean_pct(&[38.77, 42.90, 28.33]), Some(36.67));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_pct(0.125), 0.13);
        assert_eq!(round_pct(60.175), 60.18);
        assert_eq!(round_pct(1.0 / 3.0 * 100.0), 33.33);
    }

    #[test]
    fn tsv_round_trip() {
        let g = Glossary::from_entries(
            vec![
                TermPair::with_frequency("fever", "fiebre", 4).unwrap(),
                TermPair::with_frequency("viral infection", "infección viral", 2).unwrap(),
            ],
            lang("en"),
            lang("es"),
        )
        .unwrap();
        let tsv = g.to_tsv();
        assert_eq!(tsv, "viral infection\tinfección viral\t2\nfever\tfiebre\t4\n");
        assert_eq!(Glossary::from_tsv(&tsv, lang("en"), lang("es")).unwrap(), g);
        assert!(Glossary::from_tsv("a\tb\t1\n", lang("en"), lang("es")).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Straightforward reimplementation: count, filter, pick, sort.
        fn oracle(pairs: &[(String, String)], stop: &HashSet<String>) -> Vec<(String, String, u32)> {
            let mut counts: BTreeMap<(String, String), u32> = BTreeMap::new();
            for (s, t) in pairs {
                *counts.entry((s.clone(), t.clone())).or_default() += 1;
            }
            let mut sources: Vec<String> = counts.keys().map(|(s, _)| s.clone()).collect();
            sources.dedup();
            let mut out = Vec::new();
            for s in sources {
                if stop.contains(&s.to_lowercase()) || s.split_whitespace().count() > 5 {
                    continue;
                }
                let mut cands: Vec<(&String, u32)> = counts
                    .iter()
                    .filter(|((cs, ct), _)| *cs == s && !stop.contains(&ct.to_lowercase()))
                    .map(|((_, ct), n)| (ct, *n))
                    .collect();
                cands.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                if let Some((t, n)) = cands.first() {
                    if *n >= 2 {
                        out.push((s.clone(), (*t).clone(), *n));
                    }
                }
            }
            out.sort_by(|a, b| {
                let la = a.0.split_whitespace().count();
                let lb = b.0.split_whitespace().count();
                lb.cmp(&la).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0))
            });
            out
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn compile_matches_oracle(
                raw in prop::collection::vec((0usize..12, 1usize..7, 0usize..4), 0..1000),
            ) {
                let words = ["the", "acute", "viral", "fever", "cough", "rash", "of", "lung"];
                let targets = ["x", "y", "z", "el"];
                let pairs: Vec<(String, String)> = raw
                    .iter()
                    .map(|(a, n, t)| {
                        let src: Vec<&str> = (0..*n).map(|k| words[(a + k) % words.len()]).collect();
                        (src.join(" "), targets[*t].to_string())
                    })
                    .collect();
                let stop: HashSet<String> = ["the", "of", "el"].iter().map(|s| s.to_string()).collect();
                let occurrences: Vec<TermPair> = pairs.iter().map(|(s, t)| tp(s, t)).collect();
                let g = compile_glossary(
                    &occurrences,
                    &Stopwords::new(stop.clone(), stop.clone()),
                    &GlossaryOptions::default(),
                    lang("en"),
                    lang("es"),
                );
                let got: Vec<(String, String, u32)> = g
                    .entries()
                    .iter()
                    .map(|e| (e.source_term.clone(), e.target_term.clone(), e.frequency))
                    .collect();
                prop_assert_eq!(got, oracle(&pairs, &stop));
            }

            #[test]
            fn truncation_is_prefix(k in 1usize..8, words in prop::collection::vec(0usize..6, 1..15)) {
                let vocab = ["a", "b", "c", "d", "e", "f"];
                let entries: Vec<TermPair> = vocab
                    .iter()
                    .enumerate()
                    .map(|(i, w)| TermPair::with_frequency(w, "t", 2 + i as u32).unwrap())
                    .chain(std::iter::once(TermPair::with_frequency("a b", "t", 2).unwrap()))
                    .collect();
                let g = Glossary::from_entries(entries, lang("en"), lang("es")).unwrap();
                let src: Vec<&str> = words.iter().map(|i| vocab[*i]).collect();
                let src = src.join(" ");
                let full = match_terms(&src, &g, 100).unwrap();
                let short = match_terms(&src, &g, k).unwrap();
                prop_assert!(short.len() <= k);
                prop_assert_eq!(&full[..short.len()], &short[..]);
            }
        }
    }
}
