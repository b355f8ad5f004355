//! Prompt construction for completion-style translation models.
//!
//! Every template is a plain string built line by line (LF endings, no
//! trailing newline). Few-shot templates list examples from least to most
//! similar, so the best fuzzy match sits right above the segment being
//! translated:
//!
//! ```text
//! English: <source of 2nd best match>
//! Arabic: <target of 2nd best match>
//! English: <source of best match>
//! Arabic: <target of best match>
//! English: <segment>
//! Arabic:
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sort_matches_desc, FuzzyMatch, LangCode, TermPair, TranslationUnit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("missing or empty slot `{0}`")]
    MissingSlot(String),
    #[error("few-shot prompt needs at least one fuzzy match")]
    EmptyMatches,
    #[error("term list is empty")]
    EmptyTerms,
    #[error("count must be at least 1")]
    InvalidCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    ZeroShot,
    FewShot,
    FewShotOneMt,
    FewShotAllMt,
    TermExtract,
    ZeroShotTerms,
    FewShotFuzzyTerms,
    FewShotGlossaryTerms,
    TermApe,
    SynthTermGen,
    PrefixAugment,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 11] = [
        TemplateKind::ZeroShot,
        TemplateKind::FewShot,
        TemplateKind::FewShotOneMt,
        TemplateKind::FewShotAllMt,
        TemplateKind::TermExtract,
        TemplateKind::ZeroShotTerms,
        TemplateKind::FewShotFuzzyTerms,
        TemplateKind::FewShotGlossaryTerms,
        TemplateKind::TermApe,
        TemplateKind::SynthTermGen,
        TemplateKind::PrefixAugment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::ZeroShot => "zero_shot",
            TemplateKind::FewShot => "few_shot",
            TemplateKind::FewShotOneMt => "few_shot_one_mt",
            TemplateKind::FewShotAllMt => "few_shot_all_mt",
            TemplateKind::TermExtract => "term_extract",
            TemplateKind::ZeroShotTerms => "zero_shot_terms",
            TemplateKind::FewShotFuzzyTerms => "few_shot_fuzzy_terms",
            TemplateKind::FewShotGlossaryTerms => "few_shot_glossary_terms",
            TemplateKind::TermApe => "term_ape",
            TemplateKind::SynthTermGen => "synth_term_gen",
            TemplateKind::PrefixAugment => "prefix_augment",
        }
    }

    /// Single-line translation templates stop at the first newline.
    pub fn expects_newline_stop(self) -> bool {
        !matches!(
            self,
            TemplateKind::TermExtract
                | TemplateKind::TermApe
                | TemplateKind::SynthTermGen
                | TemplateKind::PrefixAugment
        )
    }
}

/// One in-context example: a fuzzy match plus optional MT output and terms
/// for its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub fuzzy: FuzzyMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mt: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermPair>,
}

impl From<FuzzyMatch> for Shot {
    fn from(fuzzy: FuzzyMatch) -> Self {
        Shot {
            fuzzy,
            mt: None,
            terms: Vec::new(),
        }
    }
}

/// Template identifier plus its slot bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum PromptSpec {
    ZeroShot {
        src_lang: LangCode,
        tgt_lang: LangCode,
        segment: String,
    },
    FewShot {
        src_lang: LangCode,
        tgt_lang: LangCode,
        segment: String,
        shots: Vec<Shot>,
    },
    /// Few-shot plus an MT suggestion for the segment only.
    FewShotOneMt {
        src_lang: LangCode,
        tgt_lang: LangCode,
        segment: String,
        shots: Vec<Shot>,
        mt: String,
    },
    /// Few-shot with MT lines for every example and for the segment.
    FewShotAllMt {
        src_lang: LangCode,
        tgt_lang: LangCode,
        segment: String,
        shots: Vec<Shot>,
        mt: String,
    },
    TermExtract {
        unit: TranslationUnit,
        number: u32,
        separator: String,
    },
    ZeroShotTerms {
        src_lang: LangCode,
        tgt_lang: LangCode,
        segment: String,
        terms: Vec<TermPair>,
    },
    /// Terms come from the fuzzy matches' extracted terms.
    FewShotFuzzyTerms {
        src_lang: LangCode,
        tgt_lang: LangCode,
        segment: String,
        shots: Vec<Shot>,
        terms: Vec<TermPair>,
    },
    /// Segment terms come from the glossary.
    FewShotGlossaryTerms {
        src_lang: LangCode,
        tgt_lang: LangCode,
        segment: String,
        shots: Vec<Shot>,
        terms: Vec<TermPair>,
    },
    TermApe {
        src_lang: LangCode,
        tgt_lang: LangCode,
        source: String,
        translation: String,
        terms: Vec<TermPair>,
    },
    SynthTermGen {
        term: String,
        count: u32,
        src_lang: LangCode,
        tgt_lang: LangCode,
    },
    PrefixAugment {
        segment: String,
        fuzzy: TranslationUnit,
        src_code: String,
        tgt_code: String,
        #[serde(default = "default_joiner")]
        joiner: String,
    },
}

pub const DEFAULT_JOINER: &str = "•";

fn default_joiner() -> String {
    DEFAULT_JOINER.to_string()
}

impl PromptSpec {
    pub fn kind(&self) -> TemplateKind {
        match self {
            PromptSpec::ZeroShot { .. } => TemplateKind::ZeroShot,
            PromptSpec::FewShot { .. } => TemplateKind::FewShot,
            PromptSpec::FewShotOneMt { .. } => TemplateKind::FewShotOneMt,
            PromptSpec::FewShotAllMt { .. } => TemplateKind::FewShotAllMt,
            PromptSpec::TermExtract { .. } => TemplateKind::TermExtract,
            PromptSpec::ZeroShotTerms { .. } => TemplateKind::ZeroShotTerms,
            PromptSpec::FewShotFuzzyTerms { .. } => TemplateKind::FewShotFuzzyTerms,
            PromptSpec::FewShotGlossaryTerms { .. } => TemplateKind::FewShotGlossaryTerms,
            PromptSpec::TermApe { .. } => TemplateKind::TermApe,
            PromptSpec::SynthTermGen { .. } => TemplateKind::SynthTermGen,
            PromptSpec::PrefixAugment { .. } => TemplateKind::PrefixAugment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template: TemplateKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_stop: Option<String>,
    /// Decoder prefix, only set for the prefix-augmentation format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_prefix: Option<String>,
    pub slots_used: BTreeMap<String, String>,
}

impl RenderedPrompt {
    /// The segment being translated, when the template has one.
    pub fn segment(&self) -> Option<&str> {
        self.slots_used.get("source_segment").map(String::as_str)
    }
}

/// Slot names as they appear in the published template text. Rendered
/// prompts must never contain any of them in `<...>` form.
pub const SLOT_NAMES: &[&str] = &[
    "source_segment",
    "source_fuzzy_match",
    "target_fuzzy_match",
    "mt_segment",
    "mt_fuzzy_match",
    "source_lang",
    "target_lang",
    "source_sentence",
    "target_sentence",
    "number",
    "separator",
    "src_term",
    "tgt_term",
    "terms_fuzzy_match",
    "terms_from_fuzzy_matches",
    "terms_from_glossary",
    "src_lang",
    "tgt_lang",
    "src_segment",
    "tgt_segment",
];

pub fn contains_placeholder(text: &str) -> bool {
    SLOT_NAMES
        .iter()
        .any(|s| text.contains(&format!("<{s}>")) || text.contains(&format!("<{s}_")))
}

struct Builder {
    lines: Vec<String>,
    slots: BTreeMap<String, String>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            lines: Vec::new(),
            slots: BTreeMap::new(),
        }
    }

    fn slot(&mut self, name: impl Into<String>, value: &str) {
        self.slots.insert(name.into(), value.to_string());
    }

    fn line(&mut self, l: impl Into<String>) {
        self.lines.push(l.into());
    }

    fn finish(self, template: TemplateKind) -> RenderedPrompt {
        RenderedPrompt {
            template,
            text: self.lines.join("\n"),
            expected_stop: template.expects_newline_stop().then(|| "\n".to_string()),
            target_prefix: None,
            slots_used: self.slots,
        }
    }
}

fn require<'a>(name: &str, value: &'a str) -> Result<&'a str, PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::MissingSlot(name.to_string()))
    } else {
        Ok(value)
    }
}

/// `Terms: s1 = t1 - s2 = t2 - ...`
pub fn render_terms_block(terms: &[TermPair]) -> Result<String, PromptError> {
    if terms.is_empty() {
        return Err(PromptError::EmptyTerms);
    }
    let joined = terms
        .iter()
        .map(|t| format!("{} = {}", t.source_term, t.target_term))
        .collect::<Vec<_>>()
        .join(" - ");
    Ok(format!("Terms: {joined}"))
}

/// Renders any template. Fuzzy matches are sorted by similarity descending
/// and then written out in reverse.
pub fn render(spec: &PromptSpec) -> Result<RenderedPrompt, PromptError> {
    match spec {
        PromptSpec::ZeroShot {
            src_lang,
            tgt_lang,
            segment,
        } => translation_prompt(
            TemplateKind::ZeroShot,
            src_lang,
            tgt_lang,
            segment,
            &[],
            ShotMode::Plain,
            None,
            &[],
        ),
        PromptSpec::FewShot {
            src_lang,
            tgt_lang,
            segment,
            shots,
        } => translation_prompt(
            TemplateKind::FewShot,
            src_lang,
            tgt_lang,
            segment,
            shots,
            ShotMode::Plain,
            None,
            &[],
        ),
        PromptSpec::FewShotOneMt {
            src_lang,
            tgt_lang,
            segment,
            shots,
            mt,
        } => translation_prompt(
            TemplateKind::FewShotOneMt,
            src_lang,
            tgt_lang,
            segment,
            shots,
            ShotMode::Plain,
            Some(mt),
            &[],
        ),
        PromptSpec::FewShotAllMt {
            src_lang,
            tgt_lang,
            segment,
            shots,
            mt,
        } => translation_prompt(
            TemplateKind::FewShotAllMt,
            src_lang,
            tgt_lang,
            segment,
            shots,
            ShotMode::WithMt,
            Some(mt),
            &[],
        ),
        PromptSpec::ZeroShotTerms {
            src_lang,
            tgt_lang,
            segment,
            terms,
        } => translation_prompt(
            TemplateKind::ZeroShotTerms,
            src_lang,
            tgt_lang,
            segment,
            &[],
            ShotMode::Plain,
            None,
            terms,
        ),
        PromptSpec::FewShotFuzzyTerms {
            src_lang,
            tgt_lang,
            segment,
            shots,
            terms,
        } => translation_prompt(
            TemplateKind::FewShotFuzzyTerms,
            src_lang,
            tgt_lang,
            segment,
            shots,
            ShotMode::WithTerms,
            None,
            terms,
        ),
        PromptSpec::FewShotGlossaryTerms {
            src_lang,
            tgt_lang,
            segment,
            shots,
            terms,
        } => translation_prompt(
            TemplateKind::FewShotGlossaryTerms,
            src_lang,
            tgt_lang,
            segment,
            shots,
            ShotMode::WithTerms,
            None,
            terms,
        ),
        PromptSpec::TermExtract {
            unit,
            number,
            separator,
        } => render_term_extract(unit, *number, separator),
        PromptSpec::TermApe {
            src_lang,
            tgt_lang,
            source,
            translation,
            terms,
        } => render_term_ape(src_lang, tgt_lang, source, translation, terms),
        PromptSpec::SynthTermGen {
            term,
            count,
            src_lang,
            tgt_lang,
        } => render_synth_gen(term, *count, src_lang, tgt_lang),
        PromptSpec::PrefixAugment {
            segment,
            fuzzy,
            src_code,
            tgt_code,
            joiner,
        } => {
            let (augmented, prefix) = render_prefix_augment(segment, fuzzy, src_code, tgt_code, joiner)?;
            let mut b = Builder::new();
            b.slot("source_segment", segment);
            b.slot("source_fuzzy_match", fuzzy.source());
            b.slot("target_fuzzy_match", fuzzy.target());
            b.slot("src_code", src_code);
            b.slot("tgt_code", tgt_code);
            b.slot("joiner", joiner);
            b.line(augmented);
            let mut r = b.finish(TemplateKind::PrefixAugment);
            r.target_prefix = Some(prefix);
            Ok(r)
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum ShotMode {
    Plain,
    WithMt,
    WithTerms,
}

#[allow(clippy::too_many_arguments)]
fn translation_prompt(
    kind: TemplateKind,
    src_lang: &LangCode,
    tgt_lang: &LangCode,
    segment: &str,
    shots: &[Shot],
    mode: ShotMode,
    mt: Option<&String>,
    terms: &[TermPair],
) -> Result<RenderedPrompt, PromptError> {
    let segment = require("source_segment", segment)?;
    let few_shot = !matches!(kind, TemplateKind::ZeroShot | TemplateKind::ZeroShotTerms);
    if few_shot && shots.is_empty() {
        return Err(PromptError::EmptyMatches);
    }
    let src = src_lang.display_name();
    let tgt = tgt_lang.display_name();

    let mut ordered: Vec<&Shot> = shots.iter().collect();
    ordered.sort_by(|a, b| b.fuzzy.similarity.total_cmp(&a.fuzzy.similarity));

    let mut b = Builder::new();
    b.slot("src_lang", src);
    b.slot("tgt_lang", tgt);
    b.slot("source_segment", segment);

    // ordered[0] is the best match; emit from the worst down to it
    for (rank, shot) in ordered.iter().enumerate().rev() {
        let n = rank + 1;
        let s = require(&format!("source_fuzzy_match_{n}"), shot.fuzzy.unit.source())?;
        let t = require(&format!("target_fuzzy_match_{n}"), shot.fuzzy.unit.target())?;
        if mode == ShotMode::WithTerms && !shot.terms.is_empty() {
            let block = render_terms_block(&shot.terms)?;
            b.slot(format!("terms_fuzzy_match_{n}"), &block);
            b.line(block);
        }
        b.slot(format!("source_fuzzy_match_{n}"), s);
        b.slot(format!("target_fuzzy_match_{n}"), t);
        b.line(format!("{src}: {s}"));
        if mode == ShotMode::WithMt {
            let m = shot.mt.as_deref().unwrap_or("");
            let m = require(&format!("mt_fuzzy_match_{n}"), m)?;
            b.slot(format!("mt_fuzzy_match_{n}"), m);
            b.line(format!("MT: {m}"));
        }
        b.line(format!("{tgt}: {t}"));
    }

    if !terms.is_empty() {
        let block = render_terms_block(terms)?;
        b.slot("terms", &block);
        b.line(block);
    } else if kind == TemplateKind::ZeroShotTerms {
        return Err(PromptError::EmptyTerms);
    }
    b.line(format!("{src}: {segment}"));
    if let Some(mt) = mt {
        let mt = require("mt_segment", mt)?;
        b.slot("mt_segment", mt);
        b.line(format!("MT: {mt}"));
    }
    b.line(format!("{tgt}:"));
    Ok(b.finish(kind))
}

/// Asks for `number` bilingual term pairs from one sentence pair. The count
/// is substituted literally ("Extract 1 terms").
pub fn render_term_extract(
    pair: &TranslationUnit,
    number: u32,
    separator: &str,
) -> Result<RenderedPrompt, PromptError> {
    if number == 0 {
        return Err(PromptError::InvalidCount);
    }
    if separator.is_empty() {
        return Err(PromptError::MissingSlot("separator".into()));
    }
    let src = pair.src_lang().display_name();
    let tgt = pair.tgt_lang().display_name();
    let mut b = Builder::new();
    b.slot("source_lang", src);
    b.slot("target_lang", tgt);
    b.slot("source_sentence", pair.source());
    b.slot("target_sentence", pair.target());
    b.slot("number", &number.to_string());
    b.slot("separator", separator);
    b.line(format!("{src}: {}", pair.source()));
    b.line(format!("{tgt}: {}", pair.target()));
    b.line("");
    b.line(format!(
        "Extract {number} terms from the above sentence pair. Type each {src} term and its {tgt} equivalent in one line, separated by '{separator}'."
    ));
    b.line("");
    b.line("1.");
    Ok(b.finish(TemplateKind::TermExtract))
}

/// Post-editing instruction that inserts the given terms into an existing
/// translation and leaves the rest untouched.
pub fn render_term_ape(
    src_lang: &LangCode,
    tgt_lang: &LangCode,
    src_seg: &str,
    tgt_seg: &str,
    terms: &[TermPair],
) -> Result<RenderedPrompt, PromptError> {
    if terms.is_empty() {
        return Err(PromptError::EmptyTerms);
    }
    let src_seg = require("src_segment", src_seg)?;
    let tgt_seg = require("tgt_segment", tgt_seg)?;
    let src = src_lang.display_name();
    let tgt = tgt_lang.display_name();
    let directives = terms
        .iter()
        .map(|t| {
            format!(
                "the \"{}\" to translate the {src} term \"{}\"",
                t.target_term, t.source_term
            )
        })
        .collect::<Vec<_>>()
        .join(", and ");
    let mut b = Builder::new();
    b.slot("src_lang", src);
    b.slot("tgt_lang", tgt);
    b.slot("src_segment", src_seg);
    b.slot("tgt_segment", tgt_seg);
    b.slot(
        "terms",
        &terms
            .iter()
            .map(|t| format!("{} = {}", t.source_term, t.target_term))
            .collect::<Vec<_>>()
            .join(" - "),
    );
    b.line(format!(
        "In the following {tgt} translation, use {directives}. Leave everything else the same."
    ));
    b.line("");
    b.line(format!("{src}: {src_seg}"));
    b.line(format!("{tgt}: {tgt_seg}"));
    Ok(b.finish(TemplateKind::TermApe))
}

/// Bilingual data generation seeded by one term. The term is inserted as-is,
/// quotes included.
pub fn render_synth_gen(
    term: &str,
    n: u32,
    src_lang: &LangCode,
    tgt_lang: &LangCode,
) -> Result<RenderedPrompt, PromptError> {
    if n == 0 {
        return Err(PromptError::InvalidCount);
    }
    let term = require("term", term)?;
    let mut b = Builder::new();
    b.slot("term", term);
    b.slot("number", &n.to_string());
    b.slot("src_lang", src_lang.display_name());
    b.slot("tgt_lang", tgt_lang.display_name());
    b.line(format!(
        "Please use the \"{term}\" to generate just {n} numbered sentences in {}-{} in one Python dictionary format.",
        src_lang.display_name(),
        tgt_lang.display_name()
    ));
    Ok(b.finish(TemplateKind::SynthTermGen))
}

/// Encoder-decoder input with one fuzzy match: returns the augmented source
/// `<fuzzy src> <src_code> <joiner> <segment>` and the forced target prefix
/// `<fuzzy tgt> <tgt_code> <joiner>`.
pub fn render_prefix_augment(
    src_seg: &str,
    fuzzy: &TranslationUnit,
    src_code: &str,
    tgt_code: &str,
    joiner: &str,
) -> Result<(String, String), PromptError> {
    let src_seg = require("source_segment", src_seg)?;
    let src_code = require("src_code", src_code)?;
    let tgt_code = require("tgt_code", tgt_code)?;
    let joiner = require("joiner", joiner)?;
    Ok((
        format!("{} {src_code} {joiner} {src_seg}", fuzzy.source()),
        format!("{} {tgt_code} {joiner}", fuzzy.target()),
    ))
}

/// Removes a forced decoder prefix (and the space after it) from a model
/// output.
pub fn strip_target_prefix<'a>(output: &'a str, prefix: &str) -> &'a str {
    match output.strip_prefix(prefix) {
        Some(rest) => rest.strip_prefix(' ').unwrap_or(rest),
        None => output,
    }
}

/// Convenience: few-shot spec straight from retrieval results.
pub fn few_shot_spec(
    src_lang: &LangCode,
    tgt_lang: &LangCode,
    segment: &str,
    mut matches: Vec<FuzzyMatch>,
) -> PromptSpec {
    sort_matches_desc(&mut matches);
    PromptSpec::FewShot {
        src_lang: src_lang.clone(),
        tgt_lang: tgt_lang.clone(),
        segment: segment.to_string(),
        shots: matches.into_iter().map(Shot::from).collect(),
    }
}
