//! Corpus preparation: rule, semantic and language-ID filters, weighted
//! mixing of in-domain and generic data, synthetic generation and parsing
//! of bilingual generations.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::embed::{cosine, EmbedError, Embedder};
use crate::gateway::{CompletionRequest, Gateway};
use crate::model::{word_count, LangCode, Origin, RawUnit, SamplingParams, TranslationUnit, UnitFactory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("dataset `{0}` is empty")]
    EmptyDataset(&'static str),
    #[error("{} of {} prompts failed", failures.len(), failures.len() + successes.len())]
    PartialBatch {
        successes: Vec<Generation>,
        failures: Vec<(usize, String)>,
    },
    #[error("no valid records ({skipped} lines skipped)")]
    NoValidRecords { skipped: usize },
    #[error("negative log-probability expected, got {0}")]
    NegativeInput(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub max_len_words: usize,
    pub max_ratio: f64,
    pub sem_threshold: f64,
    pub lid_threshold: f64,
    pub drop_html: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_len_words: 200,
            max_ratio: 2.0,
            sem_threshold: 0.45,
            lid_threshold: 0.9,
            drop_html: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_len_words == 0 {
            return Err(PipelineError::Config("max_len_words must be positive".into()));
        }
        if self.max_ratio.is_nan() || self.max_ratio < 1.0 {
            return Err(PipelineError::Config("max_ratio must be at least 1".into()));
        }
        if !(-1.0..=1.1).contains(&self.sem_threshold) {
            return Err(PipelineError::Config("sem_threshold out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.lid_threshold) {
            return Err(PipelineError::Config("lid_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    Duplicate,
    SourceCopy,
    Length,
    Ratio,
    Html,
    Semantic,
    Language,
}

impl FilterRule {
    pub fn name(self) -> &'static str {
        match self {
            FilterRule::Duplicate => "duplicate",
            FilterRule::SourceCopy => "source_copy",
            FilterRule::Length => "length",
            FilterRule::Ratio => "ratio",
            FilterRule::Html => "html",
            FilterRule::Semantic => "semantic",
            FilterRule::Language => "language",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_by_rule: BTreeMap<FilterRule, usize>,
}

impl FilterReport {
    pub fn dropped(&self) -> usize {
        self.dropped_by_rule.values().sum()
    }

    /// Input equals kept plus everything dropped.
    pub fn is_balanced(&self) -> bool {
        self.input == self.kept + self.dropped()
    }

    fn drop(&mut self, rule: FilterRule) {
        self.input += 1;
        *self.dropped_by_rule.entry(rule).or_default() += 1;
    }

    fn keep(&mut self) {
        self.input += 1;
        self.kept += 1;
    }
}

/// First 128 bits of SHA-256 over NFC(source) + U+001F + NFC(target).
pub fn pair_digest(source: &str, target: &str) -> u128 {
    let mut h = Sha256::new();
    h.update(source.nfc().collect::<String>().as_bytes());
    h.update([0x1f]);
    h.update(target.nfc().collect::<String>().as_bytes());
    let d = h.finalize();
    u128::from_be_bytes(d[..16].try_into().expect("32-byte digest"))
}

/// Streaming rule filter. Checks, in order: duplicate pair, source copied
/// to target, either side longer than `max_len_words`, word-count ratio
/// above `max_ratio`, HTML tags. Only the dedup set grows with the input.
pub struct RuleFilter<I> {
    inner: I,
    cfg: FilterConfig,
    seen: HashSet<u128>,
    html: Regex,
    report: FilterReport,
}

pub fn rule_filter<I>(units: I, cfg: &FilterConfig) -> RuleFilter<I::IntoIter>
where
    I: IntoIterator<Item = TranslationUnit>,
{
    RuleFilter {
        inner: units.into_iter(),
        cfg: cfg.clone(),
        seen: HashSet::new(),
        html: Regex::new(r"</?[a-zA-Z][^>]*>").expect("static regex"),
        report: FilterReport::default(),
    }
}

impl<I> RuleFilter<I> {
    /// Counts so far; final once the iterator is exhausted.
    pub fn report(&self) -> &FilterReport {
        &self.report
    }

    pub fn into_report(self) -> FilterReport {
        self.report
    }

    fn verdict(&mut self, u: &TranslationUnit) -> Option<FilterRule> {
        if !self.seen.insert(pair_digest(u.source(), u.target())) {
            return Some(FilterRule::Duplicate);
        }
        if u.source().trim() == u.target().trim() {
            return Some(FilterRule::SourceCopy);
        }
        let ls = word_count(u.source());
        let lt = word_count(u.target());
        if ls > self.cfg.max_len_words || lt > self.cfg.max_len_words {
            return Some(FilterRule::Length);
        }
        let (hi, lo) = (ls.max(lt) as f64, ls.min(lt).max(1) as f64);
        if hi / lo > self.cfg.max_ratio {
            return Some(FilterRule::Ratio);
        }
        if self.cfg.drop_html && (self.html.is_match(u.source()) || self.html.is_match(u.target())) {
            return Some(FilterRule::Html);
        }
        None
    }
}

impl<I: Iterator<Item = TranslationUnit>> Iterator for RuleFilter<I> {
    type Item = TranslationUnit;

    fn next(&mut self) -> Option<TranslationUnit> {
        while let Some(u) = self.inner.next() {
            match self.verdict(&u) {
                Some(rule) => self.report.drop(rule),
                None => {
                    self.report.keep();
                    return Some(u);
                }
            }
        }
        None
    }
}

/// Collects a rule-filter pass.
pub fn rule_filter_all<I>(units: I, cfg: &FilterConfig) -> (Vec<TranslationUnit>, FilterReport)
where
    I: IntoIterator<Item = TranslationUnit>,
{
    let mut f = rule_filter(units, cfg);
    let kept: Vec<TranslationUnit> = f.by_ref().collect();
    (kept, f.into_report())
}

const SEMANTIC_CHUNK: usize = 256;

/// Keeps units whose source and target embeddings have cosine similarity
/// of at least `threshold`. Units are embedded in chunks.
pub fn semantic_filter<I>(
    units: I,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<(Vec<TranslationUnit>, FilterReport), PipelineError>
where
    I: IntoIterator<Item = TranslationUnit>,
{
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    let mut chunk: Vec<TranslationUnit> = Vec::with_capacity(SEMANTIC_CHUNK);
    let mut flush = |chunk: &mut Vec<TranslationUnit>, kept: &mut Vec<TranslationUnit>| -> Result<(), PipelineError> {
        if chunk.is_empty() {
            return Ok(());
        }
        let texts: Vec<&str> = chunk.iter().flat_map(|u| [u.source(), u.target()]).collect();
        let embs = embedder.embed_batch(&texts).map_err(|e| match e {
            EmbedError::ProviderUnavailable(m) => PipelineError::ProviderUnavailable(m),
            other => PipelineError::Embed(other),
        })?;
        for (u, pair) in chunk.drain(..).zip(embs.chunks(2)) {
            if cosine(&pair[0], &pair[1])? >= threshold {
                report.keep();
                kept.push(u);
            } else {
                report.drop(FilterRule::Semantic);
            }
        }
        Ok(())
    };
    for u in units {
        chunk.push(u);
        if chunk.len() == SEMANTIC_CHUNK {
            flush(&mut chunk, &mut kept)?;
        }
    }
    flush(&mut chunk, &mut kept)?;
    Ok((kept, report))
}

/// Detected language code and confidence in [0, 1].
pub trait LanguageIdentifier: Send + Sync {
    fn detect(&self, text: &str) -> Result<(String, f64), PipelineError>;
}

/// Language identifier backed by a closure.
pub struct FnLid<F>(pub F);

impl<F> LanguageIdentifier for FnLid<F>
where
    F: Fn(&str) -> Result<(String, f64), PipelineError> + Send + Sync,
{
    fn detect(&self, text: &str) -> Result<(String, f64), PipelineError> {
        (self.0)(text)
    }
}

/// Keeps units where both sides are detected as their declared language
/// with confidence at least `threshold`. Two identifiers can be required
/// by running this twice.
pub fn language_filter<I>(
    units: I,
    lid: &dyn LanguageIdentifier,
    threshold: f64,
) -> Result<(Vec<TranslationUnit>, FilterReport), PipelineError>
where
    I: IntoIterator<Item = TranslationUnit>,
{
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for u in units {
        let ok = |text: &str, lang: &LangCode| -> Result<bool, PipelineError> {
            let (code, conf) = lid.detect(text)?;
            Ok(code == lang.code() && conf >= threshold)
        };
        if ok(u.source(), u.src_lang())? && ok(u.target(), u.tgt_lang())? {
            report.keep();
            kept.push(u);
        } else {
            report.drop(FilterRule::Language);
        }
    }
    Ok((kept, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixPlan {
    pub in_domain_weight: f64,
    pub generic_weight: f64,
    /// Size of the generic pool relative to the in-domain pool.
    pub generic_sample_ratio: f64,
}

impl Default for MixPlan {
    fn default() -> Self {
        MixPlan {
            in_domain_weight: 0.9,
            generic_weight: 0.1,
            generic_sample_ratio: 9.0,
        }
    }
}

impl MixPlan {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.in_domain_weight > 0.0 && self.generic_weight > 0.0) {
            return Err(PipelineError::Config("mix weights must be positive".into()));
        }
        if ((self.in_domain_weight + self.generic_weight) - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config("mix weights must sum to 1".into()));
        }
        if self.generic_sample_ratio.is_nan() || self.generic_sample_ratio <= 0.0 {
            return Err(PipelineError::Config("generic_sample_ratio must be positive".into()));
        }
        Ok(())
    }

    /// How many generic units to take for an in-domain pool of `n`.
    pub fn generic_quota(&self, n: usize) -> usize {
        (n as f64 * self.generic_sample_ratio).round() as usize
    }
}

/// Random subset of the generic pool sized by the plan's ratio.
pub fn select_generic<'a>(
    generic: &'a [TranslationUnit],
    in_domain_len: usize,
    plan: &MixPlan,
    seed: u64,
) -> Vec<&'a TranslationUnit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<&TranslationUnit> = generic.iter().collect();
    picked.shuffle(&mut rng);
    picked.truncate(plan.generic_quota(in_domain_len));
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    InDomain,
    Generic,
}

struct Cycler<'a> {
    items: &'a [TranslationUnit],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Cycler<'a> {
    fn new(items: &'a [TranslationUnit], rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(rng);
        Cycler { items, order, pos: 0 }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> &'a TranslationUnit {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let u = &self.items[self.order[self.pos]];
        self.pos += 1;
        u
    }
}

/// Weighted draws from the two pools. Each pool is walked in a shuffled
/// order and reshuffled when exhausted, so the smaller pool is oversampled.
pub struct MixedSample<'a> {
    rng: ChaCha8Rng,
    in_domain: Cycler<'a>,
    generic: Cycler<'a>,
    weight: f64,
    remaining: usize,
}

impl<'a> Iterator for MixedSample<'a> {
    type Item = (Pool, &'a TranslationUnit);

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        if self.rng.random::<f64>() < self.weight {
            Some((Pool::InDomain, self.in_domain.next(&mut self.rng)))
        } else {
            Some((Pool::Generic, self.generic.next(&mut self.rng)))
        }
    }
}

pub fn mixed_sample<'a>(
    in_domain: &'a [TranslationUnit],
    generic: &'a [TranslationUnit],
    plan: &MixPlan,
    seed: u64,
    n_draws: usize,
) -> Result<MixedSample<'a>, PipelineError> {
    plan.validate()?;
    if in_domain.is_empty() {
        return Err(PipelineError::EmptyDataset("in_domain"));
    }
    if generic.is_empty() {
        return Err(PipelineError::EmptyDataset("generic"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_domain = Cycler::new(in_domain, &mut rng);
    let generic = Cycler::new(generic, &mut rng);
    Ok(MixedSample {
        rng,
        in_domain,
        generic,
        weight: plan.in_domain_weight,
        remaining: n_draws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub prompts: Vec<String>,
    pub params: SamplingParams,
}

impl GenerationJob {
    pub fn new(prompts: Vec<String>) -> Result<Self, PipelineError> {
        if prompts.is_empty() {
            return Err(PipelineError::Config("generation job has no prompts".into()));
        }
        Ok(GenerationJob {
            prompts,
            params: SamplingParams::generation(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt: String,
    /// One entry per hypothesis, each split into sentences.
    pub generations: Vec<Vec<String>>,
}

/// Asks the backend for `num_hypotheses` continuations of every prompt.
/// A prompt fails if any of its hypotheses fails; when some prompts fail
/// the successes come back inside `PartialBatch`.
pub fn generate_synthetic(job: &GenerationJob, gateway: &Gateway) -> Result<Vec<Generation>, PipelineError> {
    if job.prompts.is_empty() {
        return Err(PipelineError::Config("generation job has no prompts".into()));
    }
    job.params
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let n = job.params.num_hypotheses.max(1) as usize;
    let reqs: Vec<CompletionRequest> = job
        .prompts
        .iter()
        .flat_map(|p| {
            std::iter::repeat_n(
                CompletionRequest {
                    prompt: p.clone(),
                    max_tokens: job.params.max_new_tokens,
                    temperature: job.params.temperature,
                    top_p: job.params.top_p,
                    top_k: (job.params.top_k > 0).then_some(job.params.top_k),
                    stop: job.params.stop_sequences.clone(),
                },
                n,
            )
        })
        .collect();
    let results = gateway.complete_requests(&reqs);
    let mut successes = Vec::new();
    let mut failures = Vec::new();
    for (i, (prompt, outs)) in job.prompts.iter().zip(results.chunks(n)).enumerate() {
        match outs.iter().cloned().collect::<Result<Vec<String>, _>>() {
            Ok(texts) => successes.push(Generation {
                prompt: prompt.clone(),
                generations: texts.iter().map(|t| split_sentences(t)).collect(),
            }),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.is_empty() {
        Ok(successes)
    } else if successes.is_empty() {
        Err(PipelineError::ProviderUnavailable(failures[0].1.clone()))
    } else {
        Err(PipelineError::PartialBatch { successes, failures })
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

fn is_wide_terminal(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '”' | '’' | '»' | ')' | ']' | '」' | '』')
}

/// Splits after terminal punctuation (plus any closing quotes) followed by
/// whitespace or the end of text; full-width marks need no space.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        cur.push(c);
        i += 1;
        if is_terminal(c) {
            let wide = is_wide_terminal(c);
            while i < chars.len() && (is_terminal(chars[i]) || is_closer(chars[i])) {
                cur.push(chars[i]);
                i += 1;
            }
            if wide || i == chars.len() || chars[i].is_whitespace() {
                let s = cur.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                cur.clear();
            }
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedGeneration {
    pub units: Vec<TranslationUnit>,
    pub skipped: usize,
}

fn quoted_strings(line: &str, re: &Regex) -> Vec<String> {
    re.captures_iter(line)
        .map(|c| {
            c.get(1)
                .or_else(|| c.get(2))
                .map(|m| m.as_str().replace("\\\"", "\"").replace("\\'", "'"))
                .unwrap_or_default()
        })
        .collect()
}

fn is_lang_key(key: &str, lang: &LangCode) -> bool {
    let k = key.trim().to_lowercase();
    k == lang.code() || k == lang.display_name().to_lowercase()
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim().trim_end_matches(',').trim();
    for (a, b) in [('"', '"'), ('\'', '\''), ('“', '”')] {
        if let Some(inner) = s.strip_prefix(a).and_then(|r| r.strip_suffix(b)) {
            return inner.trim();
        }
    }
    s
}

/// Tolerant parser for bilingual generations. A line is accepted as
///
/// * dictionary style: `{"de": "Satz", "en": "Sentence"}` (keys may be codes
///   or language names) or `"Satz": "Sentence",`;
/// * numbered pairs separated by `|||`, a tab, ` - ` or `:`.
///
/// Structural lines made of brackets and commas are ignored; other lines
/// that yield no pair are counted as skipped.
pub fn parse_bilingual_generation(
    llm_output: &str,
    src_lang: &LangCode,
    tgt_lang: &LangCode,
    factory: &mut UnitFactory,
) -> Result<ParsedGeneration, PipelineError> {
    let quoted = Regex::new(r#""((?:[^"\\]|\\.)*)"|'((?:[^'\\]|\\.)*)'"#).expect("static regex");
    let numbering = Regex::new(r"^\s*\d+\s*[.):]?\s*").expect("static regex");
    let mut units = Vec::new();
    let mut skipped = 0;
    for line in llm_output.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.chars().all(|c| "{}[](),;".contains(c)) {
            continue;
        }
        let pair = parse_dict_line(trimmed, &quoted, src_lang, tgt_lang).or_else(|| {
            let body = numbering.replace(trimmed, "");
            parse_separated(&body)
        });
        let unit = pair.and_then(|(s, t)| {
            factory
                .make(RawUnit::new(&s, &t, src_lang, tgt_lang).with_origin(Origin::SyntheticLm))
                .ok()
        });
        match unit {
            Some(u) => units.push(u),
            None => skipped += 1,
        }
    }
    if units.is_empty() {
        return Err(PipelineError::NoValidRecords { skipped });
    }
    Ok(ParsedGeneration { units, skipped })
}

fn parse_dict_line(line: &str, quoted: &Regex, src: &LangCode, tgt: &LangCode) -> Option<(String, String)> {
    let q = quoted_strings(line, quoted);
    match q.len() {
        4 if is_lang_key(&q[0], src) && is_lang_key(&q[2], tgt) => Some((q[1].clone(), q[3].clone())),
        4 if is_lang_key(&q[0], tgt) && is_lang_key(&q[2], src) => Some((q[3].clone(), q[1].clone())),
        2 if !is_lang_key(&q[0], src) && !is_lang_key(&q[0], tgt) => Some((q[0].clone(), q[1].clone())),
        _ => None,
    }
}

fn parse_separated(body: &str) -> Option<(String, String)> {
    for sep in ["|||", "\t", " - ", ":"] {
        if let Some((s, t)) = body.split_once(sep) {
            let (s, t) = (strip_quotes(s), strip_quotes(t));
            if !s.is_empty() && !t.is_empty() {
                return Some((s.to_string(), t.to_string()));
            }
        }
    }
    None
}

/// Turns an average negative log-probability per token into a probability.
pub fn score_to_exp(avg_neg_logprob_per_token: f64) -> Result<f64, PipelineError> {
    if avg_neg_logprob_per_token.is_nan() || avg_neg_logprob_per_token < 0.0 {
        return Err(PipelineError::NegativeInput(avg_neg_logprob_per_token));
    }
    Ok((-avg_neg_logprob_per_token).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::gateway::{BackendConfig, BackendError, MockBackend, TokenPolicy};
    use crate::model::validate_unit;
    use std::sync::Arc;

    fn lang(c: &str) -> LangCode {
        LangCode::from_code(c).unwrap()
    }

    fn unit(s: &str, t: &str) -> TranslationUnit {
        validate_unit(RawUnit::new(s, t, &lang("en"), &lang("es"))).unwrap()
    }

    #[test]
    fn rule_order_and_counts() {
        let long = vec!["w"; 201].join(" ");
        let units = vec![
            unit("hello there", "hola allí"),
            unit("hello there", "hola allí"),
            unit("x", "x"),
            unit(&long, &long.replace('w', "v")),
            unit("one", "uno dos tres"),
            unit("<b>bold</b> text", "texto en negrita"),
            unit("good day", "buen día"),
        ];
        let (kept, report) = rule_filter_all(units, &FilterConfig::default());
        assert_eq!(kept.len(), 2);
        assert!(report.is_balanced());
        for rule in [
            FilterRule::Duplicate,
            FilterRule::SourceCopy,
            FilterRule::Length,
            FilterRule::Ratio,
            FilterRule::Html,
        ] {
            assert_eq!(report.dropped_by_rule[&rule], 1, "{rule:?}");
        }
    }

    #[test]
    fn rule_filter_is_idempotent() {
        let units = vec![unit("a b", "c d"), unit("a b", "c d"), unit("e", "e")];
        let (kept, _) = rule_filter_all(units, &FilterConfig::default());
        let (again, report) = rule_filter_all(kept.clone(), &FilterConfig::default());
        assert_eq!(again, kept);
        assert_eq!(report.dropped(), 0);
    }

    #[test]
    fn ratio_boundary() {
        let cfg = FilterConfig::default();
        let (kept, _) = rule_filter_all(vec![unit("one two", "uno dos tres cuatro")], &cfg);
        assert_eq!(kept.len(), 1);
        let (kept, _) = rule_filter_all(vec![unit("one two", "uno dos tres cuatro cinco")], &cfg);
        assert!(kept.is_empty());
    }

    #[test]
    fn semantic_thresholds() {
        let e = HashEmbedder::new(384, true);
        let same = validate_unit(RawUnit::new("salud", "salud", &lang("en"), &lang("es"))).unwrap();
        let (kept, _) = semantic_filter(vec![same.clone()], &e, 0.45).unwrap();
        assert_eq!(kept.len(), 1);
        let (kept, report) = semantic_filter(vec![same], &e, 1.1).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.dropped_by_rule[&FilterRule::Semantic], 1);
    }

    #[test]
    fn language_filter_rules() {
        let lid = FnLid(|t: &str| {
            Ok(match t {
                "hello" => ("en".to_string(), 0.99),
                "hola" => ("es".to_string(), 0.98),
                "bonjour" => ("fr".to_string(), 0.95),
                _ => ("en".to_string(), 0.85),
            })
        });
        let (kept, report) = language_filter(
            vec![unit("hello", "hola"), unit("bonjour", "hola"), unit("unsure", "hola")],
            &lid,
            0.9,
        )
        .unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(report.dropped_by_rule[&FilterRule::Language], 2);
    }

    #[test]
    fn mix_plan_validation() {
        let bad = MixPlan {
            in_domain_weight: 1.0,
            generic_weight: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(MixPlan::default().generic_quota(10), 90);
    }

    #[test]
    fn mixed_sample_oversamples_small_pool() {
        let small: Vec<TranslationUnit> = (0..10)
            .map(|i| unit(&format!("in {i}"), &format!("dentro {i}")))
            .collect();
        let big: Vec<TranslationUnit> = (0..90)
            .map(|i| unit(&format!("gen {i}"), &format!("gen es {i}")))
            .collect();
        let draws: Vec<_> = mixed_sample(&small, &big, &MixPlan::default(), 3, 1000)
            .unwrap()
            .collect();
        let seen: HashSet<&str> = draws
            .iter()
            .filter(|(p, _)| *p == Pool::InDomain)
            .map(|(_, u)| u.source())
            .collect();
        assert_eq!(seen.len(), 10);
        let again: Vec<_> = mixed_sample(&small, &big, &MixPlan::default(), 3, 1000)
            .unwrap()
            .collect();
        assert_eq!(draws, again);
        assert!(matches!(
            mixed_sample(&[], &big, &MixPlan::default(), 3, 1),
            Err(PipelineError::EmptyDataset(_))
        ));
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("A. B? C!"), vec!["A.", "B?", "C!"]);
        assert_eq!(
            split_sentences("He said \"Go.\" Then left"),
            vec!["He said \"Go.\"", "Then left"]
        );
        assert_eq!(
            split_sentences("版本1.5很好。我们走吧！"),
            vec!["版本1.5很好。", "我们走吧！"]
        );
        assert!(split_sentences("  ").is_empty());
    }

    #[test]
    fn generation_batches_and_partial_failure() {
        let gw = Gateway::new(
            Arc::new(MockBackend::from_fn(|r| Ok(format!("{} One. Two.", r.prompt)))),
            BackendConfig::default(),
            TokenPolicy::default(),
        )
        .unwrap();
        let job = GenerationJob::new(vec!["p1".into(), "p2".into()]).unwrap();
        let out = generate_synthetic(&job, &gw).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|g| g.generations.len() == 5));
        assert_eq!(out[1].generations[0], vec!["p2 One.", "Two."]);

        let gw = Gateway::new(
            Arc::new(MockBackend::from_fn(|r| {
                if r.prompt == "p2" {
                    Err(BackendError::failed("down"))
                } else {
                    Ok("ok.".into())
                }
            })),
            BackendConfig::default(),
            TokenPolicy::default(),
        )
        .unwrap();
        let job = GenerationJob::new(vec!["p1".into(), "p2".into(), "p3".into()]).unwrap();
        match generate_synthetic(&job, &gw) {
            Err(PipelineError::PartialBatch { successes, failures }) => {
                assert_eq!(successes.len(), 2);
                assert_eq!(failures[0].0, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_generation_formats() {
        let mut f = UnitFactory::seeded(1, 0);
        let de = lang("de");
        let en = lang("en");
        let dict = "1. {\"de\": \"Satz eins\", \"en\": \"Sentence one\"}\n2. {\"de\": \"Satz zwei\", \"en\": \"Sentence two\"}\n3. {\"en\": \"Sentence three\", \"de\": \"Satz drei\"}";
        let p = parse_bilingual_generation(dict, &de, &en, &mut f).unwrap();
        let pairs: Vec<(&str, &str)> = p.units.iter().map(|u| (u.source(), u.target())).collect();
        assert_eq!(
            pairs,
            vec![
                ("Satz eins", "Sentence one"),
                ("Satz zwei", "Sentence two"),
                ("Satz drei", "Sentence three")
            ]
        );
        assert!(p.units.iter().all(|u| u.origin() == Origin::SyntheticLm));

        let mixed = "Here you go\n{\n\"Der Hund\": \"The dog\",\n1. Die Katze ||| The cat\n2. Das Haus\tThe house\n3. Der Baum - The tree\n}";
        let p = parse_bilingual_generation(mixed, &de, &en, &mut f).unwrap();
        assert_eq!(p.units.len(), 4);
        assert_eq!(p.skipped, 1);

        assert!(matches!(
            parse_bilingual_generation(
                "This is a prose paragraph without any structure at all",
                &de,
                &en,
                &mut f
            ),
            Err(PipelineError::NoValidRecords { .. })
        ));
    }

    #[test]
    fn exp_scores() {
        assert_eq!(score_to_exp(0.0).unwrap(), 1.0);
        assert!((score_to_exp(-(0.59f64).ln()).unwrap() - 0.59).abs() < 1e-4);
        assert!((score_to_exp(-(0.68f64).ln()).unwrap() - 0.68).abs() < 1e-4);
        assert!(matches!(score_to_exp(-0.1), Err(PipelineError::NegativeInput(_))));
    }

    #[test]
    fn digest_normalizes() {
        assert_eq!(pair_digest("caf\u{e9}", "x"), pair_digest("cafe\u{301}", "x"));
        assert_ne!(pair_digest("ab", "c"), pair_digest("a", "bc"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn report_conserves_and_is_idempotent(
                raw in prop::collection::vec(("[a-c]{1,3}( [a-c]{1,3}){0,4}", "[a-d]{1,3}( [a-c]{1,3}){0,6}"), 0..40),
            ) {
                let units: Vec<TranslationUnit> = raw.iter().map(|(s, t)| unit(s, t)).collect();
                let (kept, report) = rule_filter_all(units.clone(), &FilterConfig::default());
                prop_assert!(report.is_balanced());
                prop_assert_eq!(report.input, units.len());
                let (again, r2) = rule_filter_all(kept.clone(), &FilterConfig::default());
                prop_assert_eq!(again, kept);
                prop_assert_eq!(r2.dropped(), 0);
            }
        }
    }
}
