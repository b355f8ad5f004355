//! Per-project translation memories.
//!
//! A [`Project`] owns an append-only list of units for one language pair.
//! Approved edits are appended like any other unit; retrieval picks them up
//! on the next index refresh.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LangCode, ModelError, Origin, RawUnit, TranslationUnit, UnitFactory};

#[derive(Debug, Error)]
pub enum TmError {
    #[error("unit {id} is {got}, project expects {expected}")]
    LanguageMismatch { id: String, expected: String, got: String },
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no valid records in {0}")]
    NoValidRecords(PathBuf),
    #[error("cannot infer corpus format for {0}")]
    UnknownFormat(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TmError + '_ {
    move |source| TmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A client or job with its own translation memory.
#[derive(Debug, Clone)]
pub struct Project {
    id: String,
    name: String,
    src_lang: LangCode,
    tgt_lang: LangCode,
    units: Vec<TranslationUnit>,
    by_pair: HashMap<(String, String), usize>,
    pub glossary_ref: Option<String>,
}

impl Project {
    pub fn new(id: &str, name: &str, src_lang: LangCode, tgt_lang: LangCode) -> Result<Self, TmError> {
        if src_lang == tgt_lang {
            return Err(ModelError::SameLanguage(src_lang.code().to_string()).into());
        }
        Ok(Project {
            id: id.to_string(),
            name: name.to_string(),
            src_lang,
            tgt_lang,
            units: Vec::new(),
            by_pair: HashMap::new(),
            glossary_ref: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn src_lang(&self) -> &LangCode {
        &self.src_lang
    }
    pub fn tgt_lang(&self) -> &LangCode {
        &self.tgt_lang
    }
    pub fn units(&self) -> &[TranslationUnit] {
        &self.units
    }
    pub fn len(&self) -> usize {
        self.units.len()
    }
    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    fn check_langs(&self, u: &TranslationUnit) -> Result<(), TmError> {
        if u.src_lang().code() != self.src_lang.code() || u.tgt_lang().code() != self.tgt_lang.code() {
            return Err(TmError::LanguageMismatch {
                id: u.id().to_string(),
                expected: format!("{}-{}", self.src_lang, self.tgt_lang),
                got: format!("{}-{}", u.src_lang(), u.tgt_lang()),
            });
        }
        Ok(())
    }

    /// Looks up a unit by its exact (source, target) pair.
    pub fn find_pair(&self, source: &str, target: &str) -> Option<&TranslationUnit> {
        self.by_pair
            .get(&(source.to_string(), target.to_string()))
            .map(|&i| &self.units[i])
    }

    /// Appends units in order, skipping exact (source, target) duplicates.
    /// The whole batch is rejected if any unit has the wrong language pair.
    pub fn add_units<I>(&mut self, units: I) -> Result<usize, TmError>
    where
        I: IntoIterator<Item = TranslationUnit>,
    {
        let units: Vec<_> = units.into_iter().collect();
        for u in &units {
            self.check_langs(u)?;
        }
        let mut added = 0;
        for u in units {
            let key = (u.source().to_string(), u.target().to_string());
            if self.by_pair.contains_key(&key) {
                continue;
            }
            self.by_pair.insert(key, self.units.len());
            self.units.push(u);
            added += 1;
        }
        Ok(added)
    }

    /// Records a translator-approved edit. Approving an existing pair again
    /// returns the stored unit and leaves the TM unchanged.
    pub fn approve_edit(
        &mut self,
        factory: &mut UnitFactory,
        source: &str,
        edited_target: &str,
    ) -> Result<TranslationUnit, TmError> {
        if let Some(existing) = self.find_pair(source, edited_target) {
            return Ok(existing.clone());
        }
        let raw = RawUnit::new(source, edited_target, &self.src_lang, &self.tgt_lang).with_origin(Origin::ApprovedEdit);
        let unit = factory.make(raw)?;
        self.add_units([unit.clone()])?;
        Ok(unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One canonical JSON unit per line.
    JsonlUnits,
    /// `source<TAB>target`, no header.
    TsvBitext,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_string_lossy().to_lowercase();
        if name.ends_with(".jsonl") {
            Some(CorpusFormat::JsonlUnits)
        } else if name.ends_with(".tsv") || name.ends_with(".txt") {
            Some(CorpusFormat::TsvBitext)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusFile {
    pub path: PathBuf,
    pub format: CorpusFormat,
}

impl CorpusFile {
    pub fn new(path: impl Into<PathBuf>) -> Result<Self, TmError> {
        let path = path.into();
        let format = CorpusFormat::from_path(&path).ok_or_else(|| TmError::UnknownFormat(path.clone()))?;
        Ok(CorpusFile { path, format })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct LoadedCorpus {
    pub units: Vec<TranslationUnit>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads and validates a corpus file. Malformed lines are reported in
/// `skipped`; the load only fails when nothing valid remains.
pub fn load_corpus(
    file: &CorpusFile,
    src_lang: &LangCode,
    tgt_lang: &LangCode,
    factory: &mut UnitFactory,
) -> Result<LoadedCorpus, TmError> {
    let f = File::open(&file.path).map_err(io_err(&file.path))?;
    let mut units = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(&file.path))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, file.format, src_lang, tgt_lang, factory) {
            Ok(u) => units.push(u),
            Err(reason) => skipped.push(SkippedLine { line: lineno, reason }),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{}: skipped {} malformed line(s)", file.path.display(), skipped.len());
    }
    if units.is_empty() {
        return Err(TmError::NoValidRecords(file.path.clone()));
    }
    Ok(LoadedCorpus { units, skipped })
}

fn parse_line(
    line: &str,
    format: CorpusFormat,
    src_lang: &LangCode,
    tgt_lang: &LangCode,
    factory: &mut UnitFactory,
) -> Result<TranslationUnit, String> {
    match format {
        CorpusFormat::TsvBitext => {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let mut cols = line.split('\t');
            let (Some(src), Some(tgt), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err("expected exactly two tab-separated columns".into());
            };
            factory
                .make(RawUnit::new(src, tgt, src_lang, tgt_lang))
                .map_err(|e| e.to_string())
        }
        CorpusFormat::JsonlUnits => {
            let raw: RawUnit = serde_json::from_str(line).map_err(|e| e.to_string())?;
            if raw.src_lang.code() != src_lang.code() || raw.tgt_lang.code() != tgt_lang.code() {
                return Err(format!(
                    "language pair {}-{} does not match {}-{}",
                    raw.src_lang, raw.tgt_lang, src_lang, tgt_lang
                ));
            }
            factory.make(raw).map_err(|e| e.to_string())
        }
    }
}

/// Writes units in the format implied by the path's extension.
pub fn save_corpus<'a, I>(path: &Path, units: I) -> Result<usize, TmError>
where
    I: IntoIterator<Item = &'a TranslationUnit>,
{
    let format = CorpusFormat::from_path(path).ok_or_else(|| TmError::UnknownFormat(path.to_path_buf()))?;
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut n = 0;
    for u in units {
        match format {
            CorpusFormat::JsonlUnits => {
                serde_json::to_writer(&mut w, u).map_err(|e| TmError::Io {
                    path: path.to_path_buf(),
                    source: e.into(),
                })?;
                w.write_all(b"\n").map_err(io_err(path))?;
            }
            CorpusFormat::TsvBitext => {
                writeln!(w, "{}\t{}", u.source(), u.target()).map_err(io_err(path))?;
            }
        }
        n += 1;
    }
    w.flush().map_err(io_err(path))?;
    Ok(n)
}

/// Appends one unit to a `*.units.jsonl` file.
pub fn append_unit(path: &Path, unit: &TranslationUnit) -> Result<(), TmError> {
    let f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let line = serde_json::to_string(unit).expect("unit serializes");
    writeln!(w, "{line}").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
