//! Word-level autocompletion by sampling translation hypotheses.
//!
//! For each run the sampler is asked for `num_hypotheses` translations of
//! the source. When the translator has typed a left context that starts
//! with a capital letter (or any letter of an uncased script), the sampler
//! is also asked to continue that context. The first word that starts with
//! the typed characters wins. The right context is accepted but not used.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Error)]
pub enum WlacError {
    #[error("sampler failed in run {run}: {message}")]
    SamplerFailure { run: u32, message: String },
    #[error("no results to score")]
    EmptyInput,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct SamplerError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlacQuery {
    pub source: String,
    #[serde(default)]
    pub left_context: Option<String>,
    #[serde(default)]
    pub right_context: Option<String>,
    pub typed: String,
}

impl WlacQuery {
    pub fn new(source: &str, typed: &str) -> Result<Self, WlacError> {
        let q = WlacQuery {
            source: source.to_string(),
            left_context: None,
            right_context: None,
            typed: typed.to_string(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_left(mut self, left: &str) -> Self {
        self.left_context = Some(left.to_string());
        self
    }

    pub fn with_right(mut self, right: &str) -> Self {
        self.right_context = Some(right.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), WlacError> {
        if self.typed.is_empty() {
            return Err(WlacError::InvalidQuery("typed sequence is empty".into()));
        }
        if self.source.trim().is_empty() {
            return Err(WlacError::InvalidQuery("source is empty".into()));
        }
        Ok(())
    }

    fn left(&self) -> Option<&str> {
        self.left_context.as_deref().map(str::trim).filter(|l| !l.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WlacConfig {
    pub num_hypotheses: u32,
    pub top_k: u32,
    pub max_runs: u32,
    pub temp_lo: f64,
    pub temp_hi: f64,
    pub seed: Option<u64>,
}

impl Default for WlacConfig {
    fn default() -> Self {
        WlacConfig {
            num_hypotheses: 10,
            top_k: 10,
            max_runs: 5,
            temp_lo: 1.0,
            temp_hi: 1.3,
            seed: None,
        }
    }
}

impl WlacConfig {
    pub fn validate(&self) -> Result<(), WlacError> {
        if self.max_runs < 1 {
            return Err(WlacError::InvalidConfig("max_runs must be at least 1".into()));
        }
        if self.num_hypotheses < 1 {
            return Err(WlacError::InvalidConfig("num_hypotheses must be at least 1".into()));
        }
        if !(self.temp_lo.is_finite() && self.temp_hi.is_finite()) || self.temp_lo < 0.0 || self.temp_lo > self.temp_hi
        {
            return Err(WlacError::InvalidConfig("need 0 <= temp_lo <= temp_hi".into()));
        }
        Ok(())
    }

    /// Temperatures for each run: `temp_lo` first, then uniform draws from
    /// `[temp_lo, temp_hi]`.
    pub fn temperatures(&self) -> Vec<f64> {
        let mut rng = match self.seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_os_rng(),
        };
        (1..=self.max_runs)
            .map(|r| {
                if r == 1 || self.temp_lo == self.temp_hi {
                    self.temp_lo
                } else {
                    rng.random_range(self.temp_lo..=self.temp_hi)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlacResult {
    pub word: Option<String>,
    pub run_found: Option<u32>,
    pub candidates_scanned: usize,
    pub used_prefix: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest<'a> {
    pub source: &'a str,
    pub target_prefix: Option<&'a str>,
    pub n: u32,
    pub top_k: u32,
    pub temperature: f64,
}

/// A translation model that returns `n` sampled hypotheses as token
/// sequences. When `target_prefix` is set the hypotheses continue it; they
/// may or may not repeat the prefix itself.
pub trait Sampler: Send + Sync {
    fn sample(&self, req: &SampleRequest<'_>) -> Result<Vec<Vec<String>>, SamplerError>;
}

pub trait WordTokenizer: Send + Sync {
    fn detokenize(&self, tokens: &[String]) -> String;
    fn words(&self, text: &str) -> Vec<String>;
}

/// Unicode word segmentation. Hyphenated compounds stay one word, and
/// SentencePiece-style `▁` markers are honoured when detokenizing.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnicodeTokenizer;

fn is_word_segment(s: &str) -> bool {
    s.chars().any(char::is_alphanumeric)
}

fn is_hyphen(s: &str) -> bool {
    matches!(s, "-" | "\u{2010}" | "\u{2011}")
}

/// Words in reading order, punctuation and spaces removed.
pub fn word_tokenize(text: &str) -> Vec<String> {
    let segs: Vec<&str> = text.split_word_bounds().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < segs.len() {
        if is_word_segment(segs[i]) {
            cur.push_str(segs[i]);
            if i + 2 < segs.len() && is_hyphen(segs[i + 1]) && is_word_segment(segs[i + 2]) {
                cur.push_str(segs[i + 1]);
                i += 2;
                continue;
            }
            out.push(std::mem::take(&mut cur));
        }
        i += 1;
    }
    out
}

impl WordTokenizer for UnicodeTokenizer {
    fn detokenize(&self, tokens: &[String]) -> String {
        if tokens.iter().any(|t| t.contains('\u{2581}')) {
            return tokens.concat().replace('\u{2581}', " ").trim().to_string();
        }
        tokens.join(" ")
    }

    fn words(&self, text: &str) -> Vec<String> {
        word_tokenize(text)
    }
}

/// Uppercase first letter, or a letter from a script without case.
fn triggers_prefix(left: &str) -> bool {
    match left.chars().next() {
        Some(c) if c.is_uppercase() => true,
        Some(c) => c.is_alphabetic() && !c.is_lowercase(),
        None => false,
    }
}

fn continuation<'a>(hyp: &'a str, prefix: &str) -> &'a str {
    hyp.strip_prefix(prefix).map(str::trim_start).unwrap_or(hyp)
}

/// First word starting with `typed`, trying exact case over all words
/// before falling back to a case-insensitive pass.
pub fn find_completion<'a>(words: &'a [String], typed: &str) -> Option<&'a String> {
    words.iter().find(|w| w.starts_with(typed)).or_else(|| {
        let t = typed.to_lowercase();
        words.iter().find(|w| w.to_lowercase().starts_with(&t))
    })
}

pub fn autocomplete(
    query: &WlacQuery,
    sampler: &dyn Sampler,
    tokenizer: &dyn WordTokenizer,
    cfg: &WlacConfig,
) -> Result<WlacResult, WlacError> {
    query.validate()?;
    cfg.validate()?;
    let prefix = query.left().filter(|l| triggers_prefix(l));
    let mut scanned = 0;
    for (i, temperature) in cfg.temperatures().into_iter().enumerate() {
        let run = i as u32 + 1;
        let fail = |e: SamplerError| WlacError::SamplerFailure { run, message: e.0 };
        let mut req = SampleRequest {
            source: &query.source,
            target_prefix: None,
            n: cfg.num_hypotheses,
            top_k: cfg.top_k,
            temperature,
        };
        let mut words: Vec<String> = Vec::new();
        for hyp in sampler.sample(&req).map_err(fail)? {
            words.extend(tokenizer.words(&tokenizer.detokenize(&hyp)));
        }
        if let Some(p) = prefix {
            req.target_prefix = Some(p);
            for hyp in sampler.sample(&req).map_err(fail)? {
                let text = tokenizer.detokenize(&hyp);
                words.extend(tokenizer.words(continuation(&text, p)));
            }
        }
        scanned += words.len();
        if let Some(w) = find_completion(&words, &query.typed) {
            return Ok(WlacResult {
                word: Some(w.clone()),
                run_found: Some(run),
                candidates_scanned: scanned,
                used_prefix: prefix.is_some(),
            });
        }
    }
    Ok(WlacResult {
        word: None,
        run_found: None,
        candidates_scanned: scanned,
        used_prefix: prefix.is_some(),
    })
}

/// Share of predictions equal to the gold word.
pub fn wlac_accuracy(results: &[(WlacResult, String)]) -> Result<f64, WlacError> {
    if results.is_empty() {
        return Err(WlacError::EmptyInput);
    }
    let hits = results
        .iter()
        .filter(|(r, gold)| r.word.as_deref() == Some(gold.as_str()))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Temperature bucket used by fixture samplers: one decimal place.
pub fn temp_bucket(t: f64) -> String {
    format!("{:.1}", t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureHypothesis {
    Text(String),
    Gated { text: String, min_top_k: u32 },
}

impl FixtureHypothesis {
    pub fn text(&self) -> &str {
        match self {
            FixtureHypothesis::Text(t) | FixtureHypothesis::Gated { text: t, .. } => t,
        }
    }

    /// Only emitted when the request's top-k is at least this large.
    pub fn min_top_k(&self) -> u32 {
        match self {
            FixtureHypothesis::Text(_) => 0,
            FixtureHypothesis::Gated { min_top_k, .. } => *min_top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub source: String,
    #[serde(default)]
    pub prefix: Option<String>,
    /// `None` matches any temperature.
    #[serde(default)]
    pub temp_bucket: Option<String>,
    pub hypotheses: Vec<FixtureHypothesis>,
}

/// Replays canned hypotheses keyed by (source, prefix, temperature bucket).
/// An exact bucket entry is preferred over a wildcard one; unknown keys
/// yield no hypotheses.
#[derive(Debug, Clone, Default)]
pub struct FixtureSampler {
    entries: HashMap<(String, Option<String>, Option<String>), Vec<FixtureHypothesis>>,
}

impl FixtureSampler {
    pub fn new(entries: Vec<FixtureEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            map.insert((e.source, e.prefix, e.temp_bucket), e.hypotheses);
        }
        FixtureSampler { entries: map }
    }

    pub fn from_json(text: &str) -> Result<Self, WlacError> {
        let entries: Vec<FixtureEntry> = serde_json::from_str(text).map_err(|e| WlacError::Fixture(e.to_string()))?;
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, WlacError> {
        let text = std::fs::read_to_string(path).map_err(|e| WlacError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Exactly what `sample` would return, as plain strings.
    pub fn emitted(&self, source: &str, prefix: Option<&str>, n: u32, top_k: u32, temperature: f64) -> Vec<String> {
        let p = prefix.map(str::to_string);
        let exact = (source.to_string(), p.clone(), Some(temp_bucket(temperature)));
        let any = (source.to_string(), p, None);
        self.entries
            .get(&exact)
            .or_else(|| self.entries.get(&any))
            .map(|hyps| {
                hyps.iter()
                    .filter(|h| h.min_top_k() <= top_k)
                    .take(n as usize)
                    .map(|h| h.text().to_string())
                    .collect()
            })
            .unwrap_or_default()
    }
}

impl Sampler for FixtureSampler {
    fn sample(&self, req: &SampleRequest<'_>) -> Result<Vec<Vec<String>>, SamplerError> {
        Ok(self
            .emitted(req.source, req.target_prefix, req.n, req.top_k, req.temperature)
            .into_iter()
            .map(|h| h.split_whitespace().map(str::to_string).collect())
            .collect())
    }
}

/// Owned copy of a sampler request.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub source: String,
    pub target_prefix: Option<String>,
    pub n: u32,
    pub top_k: u32,
    pub temperature: f64,
}

/// Wraps a sampler and records every request it sees.
pub struct SpySampler<S> {
    inner: S,
    calls: Mutex<Vec<RecordedRequest>>,
}

impl<S: Sampler> SpySampler<S> {
    pub fn new(inner: S) -> Self {
        SpySampler {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RecordedRequest> {
        self.calls.lock().expect("spy lock").clone()
    }
}

impl<S: Sampler> Sampler for SpySampler<S> {
    fn sample(&self, req: &SampleRequest<'_>) -> Result<Vec<Vec<String>>, SamplerError> {
        self.calls.lock().expect("spy lock").push(RecordedRequest {
            source: req.source.to_string(),
            target_prefix: req.target_prefix.map(str::to_string),
            n: req.n,
            top_k: req.top_k,
            temperature: req.temperature,
        });
        self.inner.sample(req)
    }
}

/// Sampler built from a closure, handy in tests.
pub struct FnSampler<F>(pub F);

impl<F> Sampler for FnSampler<F>
where
    F: Fn(&SampleRequest<'_>) -> Result<Vec<Vec<String>>, SamplerError> + Send + Sync,
{
    fn sample(&self, req: &SampleRequest<'_>) -> Result<Vec<Vec<String>>, SamplerError> {
        (self.0)(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn constant(
        hyps: &'static [&'static str],
    ) -> FnSampler<impl Fn(&SampleRequest<'_>) -> Result<Vec<Vec<String>>, SamplerError>> {
        FnSampler(move |_r: &SampleRequest<'_>| Ok(hyps.iter().map(|h| toks(h)).collect()))
    }

    fn seeded() -> WlacConfig {
        WlacConfig {
            seed: Some(7),
            ..Default::default()
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(word_tokenize("Hello, world!"), vec!["Hello", "world"]);
        assert!(word_tokenize("").is_empty());
        assert_eq!(word_tokenize("state-of-the-art"), vec!["state-of-the-art"]);
        assert_eq!(word_tokenize("a - b"), vec!["a", "b"]);
        let t = UnicodeTokenizer;
        assert_eq!(t.detokenize(&toks("\u{2581}the \u{2581}qu ick")), "the quick");
    }

    #[test]
    fn finds_first_match_in_first_run() {
        let q = WlacQuery::new("le renard", "qu").unwrap();
        let r = autocomplete(&q, &constant(&["the quick fox"]), &UnicodeTokenizer, &seeded()).unwrap();
        assert_eq!(r.word.as_deref(), Some("quick"));
        assert_eq!(r.run_found, Some(1));
        assert!(!r.used_prefix);
    }

    #[test]
    fn absent_after_all_runs() {
        let q = WlacQuery::new("x", "zz").unwrap();
        let spy = SpySampler::new(constant(&["the quick fox"]));
        let r = autocomplete(&q, &spy, &UnicodeTokenizer, &seeded()).unwrap();
        assert_eq!(r.word, None);
        assert_eq!(r.run_found, None);
        assert_eq!(spy.calls().len(), 5);
    }

    #[test]
    fn exact_case_beats_earlier_case_insensitive() {
        let q = WlacQuery::new("x", "Qu").unwrap();
        let r = autocomplete(&q, &constant(&["quiet Quick"]), &UnicodeTokenizer, &seeded()).unwrap();
        assert_eq!(r.word.as_deref(), Some("Quick"));
        let q = WlacQuery::new("x", "QU").unwrap();
        let r = autocomplete(&q, &constant(&["quiet Quick"]), &UnicodeTokenizer, &seeded()).unwrap();
        assert_eq!(r.word.as_deref(), Some("quiet"));
    }

    #[test]
    fn prefix_trigger() {
        assert!(triggers_prefix("The"));
        assert!(!triggers_prefix("the"));
        assert!(triggers_prefix("这是"));
        assert!(!triggers_prefix("3 cats"));
    }

    #[test]
    fn prefix_continuation_is_scanned_and_right_context_unused() {
        let inner = FnSampler(|r: &SampleRequest<'_>| {
            Ok(match r.target_prefix {
                Some(p) => vec![toks(&format!("{p} quantum leap"))],
                None => vec![toks("nothing here")],
            })
        });
        let spy = SpySampler::new(inner);
        let q = WlacQuery::new("src", "qua")
            .unwrap()
            .with_left("The big")
            .with_right("RIGHTMARKER");
        let r = autocomplete(&q, &spy, &UnicodeTokenizer, &seeded()).unwrap();
        assert_eq!(r.word.as_deref(), Some("quantum"));
        assert!(r.used_prefix);
        for c in spy.calls() {
            assert!(!c.source.contains("RIGHTMARKER"));
            assert!(!c.target_prefix.unwrap_or_default().contains("RIGHTMARKER"));
        }
        // lowercase left context: no prefix request
        let spy = SpySampler::new(constant(&["quantum"]));
        let q = WlacQuery::new("src", "qua").unwrap().with_left("the big");
        autocomplete(&q, &spy, &UnicodeTokenizer, &seeded()).unwrap();
        assert!(spy.calls().iter().all(|c| c.target_prefix.is_none()));
    }

    #[test]
    fn first_run_uses_lower_temperature() {
        let temps = seeded().temperatures();
        assert_eq!(temps[0], 1.0);
        assert!(temps.iter().all(|t| (1.0..=1.3).contains(t)));
        assert_eq!(temps, seeded().temperatures());
    }

    #[test]
    fn sampler_failure_reports_run() {
        let bad = FnSampler(|r: &SampleRequest<'_>| {
            if r.temperature > 1.0 {
                Err(SamplerError("boom".into()))
            } else {
                Ok(vec![])
            }
        });
        let q = WlacQuery::new("x", "a").unwrap();
        let err = autocomplete(&q, &bad, &UnicodeTokenizer, &seeded()).unwrap_err();
        assert!(matches!(err, WlacError::SamplerFailure { run: 2, .. }));
    }

    #[test]
    fn accuracy() {
        let hit = |w: Option<&str>| WlacResult {
            word: w.map(str::to_string),
            run_found: w.map(|_| 1),
            candidates_scanned: 0,
            used_prefix: false,
        };
        let mut rs: Vec<(WlacResult, String)> = (0..7).map(|_| (hit(Some("a")), "a".to_string())).collect();
        rs.extend((0..3).map(|_| (hit(Some("b")), "a".to_string())));
        assert!((wlac_accuracy(&rs).unwrap() - 0.7).abs() < 1e-12);
        let none: Vec<(WlacResult, String)> = (0..4).map(|_| (hit(None), "a".to_string())).collect();
        assert_eq!(wlac_accuracy(&none).unwrap(), 0.0);
        assert!(matches!(wlac_accuracy(&[]), Err(WlacError::EmptyInput)));
    }

    #[test]
    fn fixture_sampler_gating() {
        let s = FixtureSampler::from_json(
            r#"[{"source":"s","temp_bucket":null,"hypotheses":["a b",{"text":"c d","min_top_k":20},"e f"]},
                {"source":"s","temp_bucket":"1.2","hypotheses":["hot"]}]"#,
        )
        .unwrap();
        assert_eq!(s.emitted("s", None, 10, 10, 1.0), vec!["a b", "e f"]);
        assert_eq!(s.emitted("s", None, 10, 20, 1.0), vec!["a b", "c d", "e f"]);
        assert_eq!(s.emitted("s", None, 1, 20, 1.0), vec!["a b"]);
        assert_eq!(s.emitted("s", None, 10, 10, 1.21), vec!["hot"]);
        assert!(s.emitted("t", None, 10, 10, 1.0).is_empty());
    }
}
