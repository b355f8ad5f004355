//! Shared domain vocabulary: languages, translation units, fuzzy matches,
//! term pairs and sampling parameters.
//!
//! Every type validates on construction, so a value that exists is a value
//! that satisfies its invariants. All types serialize as snake_case JSON
//! objects (the canonical record encoding used for `*.units.jsonl` files and
//! the HTTP API).

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("source or target side is empty")]
    EmptySide,
    #[error("source and target language are both `{0}`")]
    SameLanguage(String),
    #[error("invalid language code `{0}`")]
    InvalidLanguage(String),
    #[error("similarity {0} is outside [-1, 1]")]
    SimilarityOutOfRange(f64),
    #[error("invalid term pair: {0}")]
    InvalidTerm(String),
    #[error("invalid sampling parameter: {0}")]
    InvalidParam(String),
}

/// Languages with a built-in display name.
const KNOWN_LANGUAGES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("cs", "Czech"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fr", "French"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("rw", "Kinyarwanda"),
    ("th", "Thai"),
    ("zh", "Chinese"),
];

/// Scripts written without spaces between words.
const UNSPACED: &[&str] = &["zh", "ja", "th", "lo", "km", "my"];

/// A language: short code plus the English display name used inside prompts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LangCodeRepr", into = "LangCodeRepr")]
pub struct LangCode {
    code: String,
    display_name: String,
}

#[derive(Serialize, Deserialize)]
struct LangCodeRepr {
    code: String,
    #[serde(default)]
    display_name: Option<String>,
}

impl TryFrom<LangCodeRepr> for LangCode {
    type Error = ModelError;

    fn try_from(r: LangCodeRepr) -> Result<Self, Self::Error> {
        match r.display_name {
            Some(name) => LangCode::new(&r.code, &name),
            None => LangCode::from_code(&r.code),
        }
    }
}

impl From<LangCode> for LangCodeRepr {
    fn from(l: LangCode) -> Self {
        LangCodeRepr {
            code: l.code,
            display_name: Some(l.display_name),
        }
    }
}

impl LangCode {
    pub fn new(code: &str, display_name: &str) -> Result<Self, ModelError> {
        let code = code.trim();
        if code.is_empty() || code.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
            return Err(ModelError::InvalidLanguage(code.to_string()));
        }
        let display_name = display_name.trim();
        if display_name.is_empty() {
            return Err(ModelError::InvalidLanguage(code.to_string()));
        }
        Ok(LangCode {
            code: code.to_string(),
            display_name: display_name.to_string(),
        })
    }

    /// Looks up a known code (case-insensitive). Unknown codes are rejected;
    /// use [`LangCode::new`] to supply a display name explicitly.
    pub fn from_code(code: &str) -> Result<Self, ModelError> {
        let lower = code.trim().to_lowercase();
        KNOWN_LANGUAGES
            .iter()
            .find(|(c, _)| *c == lower)
            .map(|(c, name)| LangCode {
                code: (*c).to_string(),
                display_name: (*name).to_string(),
            })
            .ok_or_else(|| ModelError::InvalidLanguage(code.to_string()))
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    /// Whether words in this language are separated by whitespace.
    pub fn is_spaced(&self) -> bool {
        !UNSPACED.contains(&self.code.as_str())
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

fn is_unspaced_char(c: char) -> bool {
    matches!(c as u32,
        0x0E00..=0x0EFF // Thai, Lao
        | 0x1000..=0x109F // Myanmar
        | 0x1780..=0x17FF // Khmer
        | 0x3040..=0x30FF // kana
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF)
}

/// Approximate word count: whitespace tokens, except that a token written
/// in an unspaced script counts as half its characters (rounded up).
pub fn word_count(text: &str) -> usize {
    text.split_whitespace()
        .map(|tok| {
            let n = tok.chars().filter(|c| is_unspaced_char(*c)).count();
            if n == 0 {
                1
            } else {
                tok.chars().count().div_ceil(2)
            }
        })
        .sum()
}

/// Parses `"en,es"` into a language pair.
pub fn parse_lang_pair(s: &str) -> Result<(LangCode, LangCode), ModelError> {
    let (a, b) = s
        .split_once(',')
        .or_else(|| s.split_once('-'))
        .ok_or_else(|| ModelError::InvalidLanguage(s.to_string()))?;
    Ok((LangCode::from_code(a)?, LangCode::from_code(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Authentic,
    SyntheticLm,
    BackTranslated,
    ApprovedEdit,
    Machine,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(String);

impl UnitId {
    pub fn new(id: impl Into<String>) -> Self {
        UnitId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where freshly minted units get their id and timestamp from.
///
/// `seeded` makes both reproducible, which the CLI relies on for
/// bit-identical outputs.
#[derive(Default)]
pub struct UnitFactory {
    rng: Option<ChaCha8Rng>,
    fixed_time_ms: Option<i64>,
}

impl UnitFactory {
    pub fn seeded(seed: u64, time_ms: i64) -> Self {
        UnitFactory {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            fixed_time_ms: Some(time_ms),
        }
    }

    pub fn next_id(&mut self) -> UnitId {
        let uuid = match &mut self.rng {
            Some(rng) => {
                let mut bytes = [0u8; 16];
                rng.fill_bytes(&mut bytes);
                uuid::Builder::from_random_bytes(bytes).into_uuid()
            }
            None => uuid::Uuid::new_v4(),
        };
        UnitId(uuid.to_string())
    }

    pub fn now_ms(&self) -> i64 {
        self.fixed_time_ms.unwrap_or_else(epoch_ms)
    }

    pub fn make(&mut self, raw: RawUnit) -> Result<TranslationUnit, ModelError> {
        let id = raw.id.clone().map(UnitId).unwrap_or_else(|| self.next_id());
        let created_at = raw.created_at.unwrap_or_else(|| self.now_ms());
        TranslationUnit::from_parts(
            id,
            raw.source,
            raw.target,
            raw.src_lang,
            raw.tgt_lang,
            raw.origin.unwrap_or(Origin::Authentic),
            created_at,
        )
    }
}

pub fn epoch_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Unvalidated input record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawUnit {
    #[serde(default)]
    pub id: Option<String>,
    pub source: String,
    pub target: String,
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    #[serde(default)]
    pub origin: Option<Origin>,
    #[serde(default)]
    pub created_at: Option<i64>,
}

impl RawUnit {
    pub fn new(source: &str, target: &str, src_lang: &LangCode, tgt_lang: &LangCode) -> Self {
        RawUnit {
            id: None,
            source: source.to_string(),
            target: target.to_string(),
            src_lang: src_lang.clone(),
            tgt_lang: tgt_lang.clone(),
            origin: None,
            created_at: None,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = Some(origin);
        self
    }
}

/// One source/target segment pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationUnit {
    id: UnitId,
    source: String,
    target: String,
    src_lang: LangCode,
    tgt_lang: LangCode,
    origin: Origin,
    /// UTC epoch milliseconds.
    created_at: i64,
}

impl<'de> Deserialize<'de> for TranslationUnit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            id: UnitId,
            source: String,
            target: String,
            src_lang: LangCode,
            tgt_lang: LangCode,
            origin: Origin,
            created_at: i64,
        }
        let r = Repr::deserialize(d)?;
        TranslationUnit::from_parts(r.id, r.source, r.target, r.src_lang, r.tgt_lang, r.origin, r.created_at)
            .map_err(serde::de::Error::custom)
    }
}

impl TranslationUnit {
    pub fn from_parts(
        id: UnitId,
        source: String,
        target: String,
        src_lang: LangCode,
        tgt_lang: LangCode,
        origin: Origin,
        created_at: i64,
    ) -> Result<Self, ModelError> {
        if source.trim().is_empty() || target.trim().is_empty() {
            return Err(ModelError::EmptySide);
        }
        if src_lang.code() == tgt_lang.code() {
            return Err(ModelError::SameLanguage(src_lang.code().to_string()));
        }
        Ok(TranslationUnit {
            id,
            source,
            target,
            src_lang,
            tgt_lang,
            origin,
            created_at,
        })
    }

    pub fn id(&self) -> &UnitId {
        &self.id
    }
    pub fn source(&self) -> &str {
        &self.source
    }
    pub fn target(&self) -> &str {
        &self.target
    }
    pub fn src_lang(&self) -> &LangCode {
        &self.src_lang
    }
    pub fn tgt_lang(&self) -> &LangCode {
        &self.tgt_lang
    }
    pub fn origin(&self) -> Origin {
        self.origin
    }
    pub fn created_at(&self) -> i64 {
        self.created_at
    }
}

/// Validates a raw record with a random id and the current time.
pub fn validate_unit(raw: RawUnit) -> Result<TranslationUnit, ModelError> {
    UnitFactory::default().make(raw)
}

/// A retrieved unit and its cosine similarity to the query source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyMatch {
    pub unit: TranslationUnit,
    pub similarity: f64,
}

impl FuzzyMatch {
    pub fn new(unit: TranslationUnit, similarity: f64) -> Result<Self, ModelError> {
        if !(-1.0..=1.0).contains(&similarity) {
            return Err(ModelError::SimilarityOutOfRange(similarity));
        }
        Ok(FuzzyMatch { unit, similarity })
    }
}

/// Sorts matches by similarity descending. The sort is stable, so equal
/// similarities keep their retrieval order.
pub fn sort_matches_desc(matches: &mut [FuzzyMatch]) {
    matches.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
}

/// A glossary or extracted term: source term, its target equivalent, how
/// often the pair was seen, and the source n-gram length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TermPair {
    pub source_term: String,
    pub target_term: String,
    pub frequency: u32,
    pub src_ngram_len: usize,
}

impl<'de> Deserialize<'de> for TermPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            source_term: String,
            target_term: String,
            #[serde(default = "one")]
            frequency: u32,
        }
        fn one() -> u32 {
            1
        }
        let r = Repr::deserialize(d)?;
        TermPair::with_frequency(&r.source_term, &r.target_term, r.frequency).map_err(serde::de::Error::custom)
    }
}

impl TermPair {
    /// A single occurrence (frequency 1).
    pub fn new(source_term: &str, target_term: &str) -> Result<Self, ModelError> {
        Self::with_frequency(source_term, target_term, 1)
    }

    pub fn with_frequency(source_term: &str, target_term: &str, frequency: u32) -> Result<Self, ModelError> {
        let s = source_term.trim();
        let t = target_term.trim();
        if s.is_empty() || t.is_empty() {
            return Err(ModelError::InvalidTerm("empty side".into()));
        }
        if frequency == 0 {
            return Err(ModelError::InvalidTerm("frequency must be at least 1".into()));
        }
        Ok(TermPair {
            source_term: s.to_string(),
            target_term: t.to_string(),
            frequency,
            src_ngram_len: s.split_whitespace().count(),
        })
    }
}

/// Decoding parameters passed to generation backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub top_p: f64,
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: u32,
    pub num_hypotheses: u32,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl SamplingParams {
    pub fn new(
        top_p: f64,
        temperature: f64,
        top_k: u32,
        num_hypotheses: u32,
        max_new_tokens: u32,
        stop_sequences: Vec<String>,
    ) -> Result<Self, ModelError> {
        let p = SamplingParams {
            top_p,
            temperature,
            top_k,
            num_hypotheses,
            max_new_tokens,
            stop_sequences,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::InvalidParam(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ModelError::InvalidParam(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.num_hypotheses == 0 {
            return Err(ModelError::InvalidParam("num_hypotheses must be >= 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(ModelError::InvalidParam("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Completion-style translation: top-p 1, temperature 0.3, stop at newline.
    pub fn translation() -> Self {
        SamplingParams {
            top_p: 1.0,
            temperature: 0.3,
            top_k: 0,
            num_hypotheses: 1,
            max_new_tokens: 256,
            stop_sequences: vec!["\n".to_string()],
        }
    }

    /// Term extraction: greedy, and multi-line output so no newline stop.
    pub fn extraction() -> Self {
        SamplingParams {
            temperature: 0.0,
            stop_sequences: Vec::new(),
            ..Self::translation()
        }
    }

    /// LM data generation: top-k 50, top-p 0.95, 300 new tokens, 5 sequences.
    pub fn generation() -> Self {
        SamplingParams {
            top_p: 0.95,
            temperature: 1.0,
            top_k: 50,
            num_hypotheses: 5,
            max_new_tokens: 300,
            stop_sequences: Vec::new(),
        }
    }
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self::translation()
    }
}
