use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use adaptmt::embed::{Embedder, EmbedderConfig};
use adaptmt::gateway::{BackendConfig, BackendKind, Gateway, GatewaySampler, TokenPolicy};
use adaptmt::ivf::{IvfIndex, SearchParams};
use adaptmt::model::{SamplingParams, TermPair, TranslationUnit, UnitFactory};
use adaptmt::pipeline::{
    parse_bilingual_generation, rule_filter_all, semantic_filter, FilterConfig, FilterReport, PipelineError,
};
use adaptmt::prompts::{few_shot_spec, render, render_synth_gen, PromptSpec, Shot};
use adaptmt::retrieval::{ProjectIndex, RetrievalConfig, DEFAULT_NPROBE};
use adaptmt::terminology::{
    compile_glossary, count_usage, match_terms, parse_extracted_terms, usage_report, Glossary, GlossaryOptions,
    Stopwords, TermMatchMode, UsageRow,
};
use adaptmt::tm::{load_corpus, save_corpus, CorpusFile, Project};
use adaptmt::wlac::{
    autocomplete, wlac_accuracy, FixtureEntry, FixtureSampler, Sampler, UnicodeTokenizer, WlacConfig, WlacQuery,
};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::*;

pub fn run(cli: &Cli) -> Result<()> {
    let out = Out { json: cli.json };
    match &cli.command {
        Command::Filter(a) => filter(a, out),
        Command::Index(IndexCommand::Build(a)) => index_build(a, out),
        Command::Index(IndexCommand::Search(a)) => index_search(a, out),
        Command::Glossary(GlossaryCommand::Compile(a)) => glossary_compile(a, out),
        Command::Glossary(GlossaryCommand::Match(a)) => glossary_match(a, out),
        Command::Translate(a) => translate(a, out),
        Command::Wlac(WlacCommand::Run(a)) => wlac_run(a, out),
        Command::Wlac(WlacCommand::Eval(a)) => wlac_eval(a, out),
        Command::Synth(SynthCommand::Generate(a)) => synth_generate(a, out),
        Command::Synth(SynthCommand::Parse(a)) => synth_parse(a, out),
        Command::Evaluate(EvaluateCommand::Terms(a)) => evaluate_terms(a, out),
        Command::Serve(a) => serve(a),
    }
}

#[derive(Clone, Copy)]
struct Out {
    json: bool,
}

impl Out {
    /// JSON when asked for, otherwise the text rendering.
    fn emit<T: Serialize>(self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        let stdout = std::io::stdout();
        let mut w = stdout.lock();
        if self.json {
            serde_json::to_writer(&mut w, value)?;
            writeln!(w)?;
        } else {
            let t = text();
            if !t.is_empty() {
                writeln!(w, "{}", t.trim_end_matches('\n'))?;
            }
        }
        Ok(())
    }
}

fn load_units(path: &Path, langs: &Langs, seed: u64) -> Result<Vec<TranslationUnit>> {
    let file = CorpusFile::new(path)?;
    let loaded = load_corpus(&file, &langs.src, &langs.tgt, &mut UnitFactory::seeded(seed, 0))?;
    for s in &loaded.skipped {
        log::warn!("{}:{}: {}", path.display(), s.line, s.reason);
    }
    Ok(loaded.units)
}

fn load_project(path: &Path, langs: &Langs, seed: u64) -> Result<Project> {
    let mut project = Project::new("cli", "cli", langs.src.clone(), langs.tgt.clone())?;
    project.add_units(load_units(path, langs, seed)?)?;
    Ok(project)
}

fn embedder(dim: usize) -> Result<Box<dyn Embedder>> {
    Ok(EmbedderConfig::hash(dim).build()?)
}

fn gateway(b: &BackendArgs) -> Result<Arc<Gateway>> {
    let cfg = match &b.backend_endpoint {
        Some(endpoint) => BackendConfig {
            kind: BackendKind::HttpCompletion,
            endpoint: Some(endpoint.clone()),
            auth_env: b.backend_token_env.clone(),
            ..BackendConfig::default()
        },
        None => BackendConfig::default(),
    };
    Ok(Arc::new(Gateway::from_config(cfg, TokenPolicy::default())?))
}

fn kept_path(input: &Path) -> PathBuf {
    let name = input.file_name().and_then(|n| n.to_str()).unwrap_or("corpus");
    let kept = match name.strip_suffix(".units.jsonl") {
        Some(stem) => format!("{stem}.kept.units.jsonl"),
        None => {
            let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
            format!("{stem}.kept.tsv")
        }
    };
    input.with_file_name(kept)
}

fn filter(a: &FilterArgs, out: Out) -> Result<()> {
    let cfg = FilterConfig {
        max_len_words: a.max_len_words,
        max_ratio: a.max_ratio,
        drop_html: !a.keep_html,
        ..FilterConfig::default()
    };
    cfg.validate()?;
    let units = load_units(&a.input, &a.langs, a.seed)?;
    let (mut kept, mut report) = rule_filter_all(units, &cfg);
    if let Some(t) = a.semantic_threshold {
        let (k, r) = semantic_filter(kept, embedder(a.dim)?.as_ref(), t)?;
        kept = k;
        report = chain(report, r);
    }
    let path = a.out.clone().unwrap_or_else(|| kept_path(&a.input));
    save_corpus(&path, &kept)?;
    let report_json = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(p) => {
            fs::write(p, format!("{report_json}\n")).with_context(|| p.display().to_string())?;
            out.emit(&json!({"kept_path": path, "report": report}), || {
                let mut s = format!("kept {} of {} -> {}\n", report.kept, report.input, path.display());
                for (rule, n) in &report.dropped_by_rule {
                    s.push_str(&format!("  {}\t{n}\n", rule.name()));
                }
                s
            })
        }
        None => out.emit(&report, || report_json.clone()),
    }
}

/// Report of two filters run one after the other.
fn chain(first: FilterReport, second: FilterReport) -> FilterReport {
    let mut r = first;
    r.kept = second.kept;
    for (rule, n) in second.dropped_by_rule {
        *r.dropped_by_rule.entry(rule).or_default() += n;
    }
    r
}

fn index_build(a: &IndexBuildArgs, out: Out) -> Result<()> {
    let project = load_project(&a.input, &a.langs, 0)?;
    let index = ProjectIndex::build(&project, embedder(a.dim)?.as_ref(), a.nlist, a.seed)?;
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| a.out.display().to_string())?);
    index.ivf().write_snapshot(&mut w)?;
    w.flush()?;
    let ivf = index.ivf();
    out.emit(
        &json!({"vectors": ivf.len(), "nlist": ivf.nlist(), "dim": ivf.dim(), "seed": a.seed, "out": a.out}),
        || {
            format!(
                "indexed {} vectors in {} lists -> {}",
                ivf.len(),
                ivf.nlist(),
                a.out.display()
            )
        },
    )
}

#[derive(Serialize)]
struct Hit<'a> {
    rank: usize,
    unit_id: &'a str,
    source: &'a str,
    target: &'a str,
    similarity: f64,
}

fn index_search(a: &IndexSearchArgs, out: Out) -> Result<()> {
    let f = File::open(&a.index).with_context(|| a.index.display().to_string())?;
    let ivf = IvfIndex::read_snapshot(std::io::BufReader::new(f))?;
    let project = load_project(&a.input, &a.langs, 0)?;
    if ivf.len() != project.len() {
        bail!(
            "index holds {} vectors but the corpus has {} units",
            ivf.len(),
            project.len()
        );
    }
    let q = embedder(ivf.dim())?.embed(&a.query)?;
    let nprobe = a.nprobe.unwrap_or(DEFAULT_NPROBE).clamp(1, ivf.nlist());
    let hits = ivf.search(&q, SearchParams::new(a.k, nprobe))?;
    let rows: Vec<Hit> = hits
        .iter()
        .enumerate()
        .map(|(i, (id, sim))| {
            let u = &project.units()[*id as usize];
            Hit {
                rank: i + 1,
                unit_id: u.id().as_str(),
                source: u.source(),
                target: u.target(),
                similarity: *sim,
            }
        })
        .collect();
    out.emit(&rows, || {
        rows.iter()
            .map(|h| format!("{}\t{:.4}\t{}\t{}\n", h.rank, h.similarity, h.source, h.target))
            .collect()
    })
}

fn read_occurrences(a: &GlossaryCompileArgs) -> Result<Vec<TermPair>> {
    let text = fs::read_to_string(&a.input).with_context(|| a.input.display().to_string())?;
    match a.format {
        OccurrenceFormat::List => Ok(parse_extracted_terms(&text, &a.separator)?.terms),
        OccurrenceFormat::Tsv => {
            let mut occ = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                let freq = match cols.get(2) {
                    Some(c) => c.trim().parse().with_context(|| format!("line {}: bad count", i + 1))?,
                    None => 1,
                };
                if cols.len() < 2 || cols.len() > 3 {
                    bail!("line {}: expected source<TAB>target[<TAB>count]", i + 1);
                }
                occ.push(TermPair::with_frequency(cols[0].trim(), cols[1].trim(), freq)?);
            }
            Ok(occ)
        }
    }
}

fn glossary_compile(a: &GlossaryCompileArgs, out: Out) -> Result<()> {
    let occ = read_occurrences(a)?;
    let (src, tgt) = (&a.langs.src, &a.langs.tgt);
    let stop = if a.no_stopwords {
        Stopwords::none()
    } else {
        let builtin = Stopwords::builtin(src, tgt);
        let s = match &a.src_stopwords {
            Some(p) => Stopwords::load_file(p)?,
            None => adaptmt::terminology::builtin_stopwords(src),
        };
        let t = match &a.tgt_stopwords {
            Some(p) => Stopwords::load_file(p)?,
            None => adaptmt::terminology::builtin_stopwords(tgt),
        };
        if a.src_stopwords.is_none() && a.tgt_stopwords.is_none() {
            builtin
        } else {
            Stopwords::new(s, t)
        }
    };
    let opts = GlossaryOptions {
        min_frequency: a.min_frequency,
        max_ngram: a.max_ngram,
        drop_overlapping: a.drop_overlapping,
    };
    let g = compile_glossary(&occ, &stop, &opts, src.clone(), tgt.clone());
    match &a.out {
        Some(p) => {
            g.save(p)?;
            out.emit(&json!({"size": g.len(), "out": p}), || {
                format!("{} entries -> {}", g.len(), p.display())
            })
        }
        None => out.emit(&g.entries(), || g.to_tsv()),
    }
}

fn glossary_match(a: &GlossaryMatchArgs, out: Out) -> Result<()> {
    let g = Glossary::load(&a.glossary, a.langs.src.clone(), a.langs.tgt.clone())?;
    let m = match_terms(&a.text, &g, a.max_terms)?;
    out.emit(&m, || {
        m.iter()
            .map(|t| format!("{}\t{}\n", t.source_term, t.target_term))
            .collect()
    })
}

#[derive(Serialize)]
struct Translated {
    source: String,
    translation: String,
    fuzzy_matches: Vec<MatchOut>,
    terms: Vec<TermPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
}

#[derive(Serialize)]
struct MatchOut {
    unit_id: String,
    source: String,
    target: String,
    similarity: f64,
}

fn segments(a: &TranslateArgs) -> Result<Vec<String>> {
    match (&a.text, &a.input) {
        (Some(t), _) => Ok(vec![t.clone()]),
        (None, Some(p)) => Ok(fs::read_to_string(p)
            .with_context(|| p.display().to_string())?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect()),
        (None, None) => bail!("give --text or --in"),
    }
}

fn translate(a: &TranslateArgs, out: Out) -> Result<()> {
    let segs = segments(a)?;
    let fuzzy = matches!(a.mode, Mode::Fuzzy | Mode::FuzzyGlossary);
    let with_terms = matches!(a.mode, Mode::ZeroShotTerms | Mode::FuzzyGlossary);
    let emb = embedder(a.dim)?;
    let tm = match (&a.tm, fuzzy) {
        (Some(p), true) => {
            let project = load_project(p, &a.langs, a.seed)?;
            let index = ProjectIndex::build(&project, emb.as_ref(), a.nlist, a.seed)?;
            Some((project, index))
        }
        (None, true) => bail!("--mode {:?} needs --tm", a.mode),
        _ => None,
    };
    let glossary = match (&a.glossary, with_terms) {
        (Some(p), true) => Some(Glossary::load(p, a.langs.src.clone(), a.langs.tgt.clone())?),
        (None, true) => bail!("--mode {:?} needs --glossary", a.mode),
        _ => None,
    };
    let (src, tgt) = (&a.langs.src, &a.langs.tgt);
    let retrieval = RetrievalConfig {
        top_k: a.k.max(1),
        exclude_exact_self: false,
        ..RetrievalConfig::default()
    };
    let mut prompts = Vec::with_capacity(segs.len());
    let mut rows = Vec::with_capacity(segs.len());
    for seg in &segs {
        let matches = match &tm {
            Some((project, index)) => index.top_fuzzy(project, emb.as_ref(), seg, &retrieval)?,
            None => Vec::new(),
        };
        let terms = match &glossary {
            Some(g) => match_terms(seg, g, a.max_terms)?,
            None => Vec::new(),
        };
        let spec = match (matches.is_empty(), with_terms) {
            (true, false) => PromptSpec::ZeroShot {
                src_lang: src.clone(),
                tgt_lang: tgt.clone(),
                segment: seg.clone(),
            },
            (true, true) => PromptSpec::ZeroShotTerms {
                src_lang: src.clone(),
                tgt_lang: tgt.clone(),
                segment: seg.clone(),
                terms: terms.clone(),
            },
            (false, false) => few_shot_spec(src, tgt, seg, matches.clone()),
            (false, true) => {
                let g = glossary.as_ref().expect("checked above");
                let mut shots = Vec::with_capacity(matches.len());
                for m in &matches {
                    let mut shot = Shot::from(m.clone());
                    shot.terms = match_terms(m.unit.source(), g, a.max_terms)?;
                    shots.push(shot);
                }
                PromptSpec::FewShotGlossaryTerms {
                    src_lang: src.clone(),
                    tgt_lang: tgt.clone(),
                    segment: seg.clone(),
                    shots,
                    terms: terms.clone(),
                }
            }
        };
        prompts.push(render(&spec)?);
        rows.push(Translated {
            source: seg.clone(),
            translation: String::new(),
            fuzzy_matches: matches
                .iter()
                .map(|m| MatchOut {
                    unit_id: m.unit.id().to_string(),
                    source: m.unit.source().to_string(),
                    target: m.unit.target().to_string(),
                    similarity: m.similarity,
                })
                .collect(),
            terms,
            prompt: None,
        });
    }
    let results = gateway(&a.backend)?.translate_batch(&prompts, &SamplingParams::translation(), tgt);
    for ((row, r), p) in rows.iter_mut().zip(results).zip(&prompts) {
        row.translation = r.with_context(|| format!("translating {:?}", row.source))?;
        if a.trace {
            row.prompt = Some(p.text.clone());
        }
    }
    out.emit(&rows, || rows.iter().map(|r| format!("{}\n", r.translation)).collect())
}

fn wlac_config(s: &WlacSearchArgs) -> Result<WlacConfig> {
    let cfg = WlacConfig {
        num_hypotheses: s.num_hypotheses,
        top_k: s.top_k,
        max_runs: s.max_runs,
        temp_lo: s.temp_lo,
        temp_hi: s.temp_hi,
        seed: Some(s.seed),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn wlac_run(a: &WlacRunArgs, out: Out) -> Result<()> {
    let cfg = wlac_config(&a.search)?;
    let sampler: Box<dyn Sampler> = match (&a.fixture, &a.langs) {
        (Some(p), _) => Box::new(FixtureSampler::load(p)?),
        (None, Some(l)) => Box::new(GatewaySampler::new(gateway(&a.backend)?, l.src.clone(), l.tgt.clone())),
        (None, None) => bail!("give --fixture, or --langs to sample from the backend"),
    };
    let query = WlacQuery {
        source: a.source.clone(),
        left_context: a.left.clone(),
        right_context: a.right.clone(),
        typed: a.typed.clone(),
    };
    let r = autocomplete(&query, sampler.as_ref(), &UnicodeTokenizer, &cfg)?;
    out.emit(&r, || r.word.clone().unwrap_or_default())
}

#[derive(Deserialize)]
struct Suite {
    queries: Vec<SuiteQuery>,
    sampler: Vec<FixtureEntry>,
}

#[derive(Deserialize)]
struct SuiteQuery {
    source: String,
    #[serde(default)]
    left_context: Option<String>,
    #[serde(default)]
    right_context: Option<String>,
    typed: String,
    gold: String,
}

fn wlac_eval(a: &WlacEvalArgs, out: Out) -> Result<()> {
    let cfg = wlac_config(&a.search)?;
    let text = fs::read_to_string(&a.suite).with_context(|| a.suite.display().to_string())?;
    let suite: Suite = serde_json::from_str(&text).with_context(|| a.suite.display().to_string())?;
    let sampler = FixtureSampler::new(suite.sampler);
    let mut results = Vec::with_capacity(suite.queries.len());
    for q in suite.queries {
        let query = WlacQuery {
            source: q.source,
            left_context: q.left_context,
            right_context: q.right_context,
            typed: q.typed,
        };
        results.push((autocomplete(&query, &sampler, &UnicodeTokenizer, &cfg)?, q.gold));
    }
    let acc = wlac_accuracy(&results)?;
    let hits = results
        .iter()
        .filter(|(r, g)| r.word.as_deref() == Some(g.as_str()))
        .count();
    out.emit(
        &json!({"queries": results.len(), "correct": hits, "accuracy": acc}),
        || format!("{acc:.4}\t{hits}/{}", results.len()),
    )
}

fn write_units(units: &[TranslationUnit], path: Option<&Path>, out: Out) -> Result<()> {
    match path {
        Some(p) => {
            let n = save_corpus(p, units)?;
            out.emit(&json!({"units": n, "out": p}), || {
                format!("{n} units -> {}", p.display())
            })
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for u in units {
                serde_json::to_writer(&mut w, u)?;
                writeln!(w)?;
            }
            Ok(())
        }
    }
}

fn synth_generate(a: &SynthGenerateArgs, out: Out) -> Result<()> {
    let text = fs::read_to_string(&a.terms).with_context(|| a.terms.display().to_string())?;
    let terms: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if terms.is_empty() {
        bail!("{}: no terms", a.terms.display());
    }
    let prompts = terms
        .iter()
        .map(|t| render_synth_gen(t, a.count, &a.langs.src, &a.langs.tgt))
        .collect::<Result<Vec<_>, _>>()?;
    let gw = gateway(&a.backend)?;
    let mut factory = UnitFactory::seeded(a.seed, 0);
    let mut units = Vec::new();
    for (term, r) in terms
        .iter()
        .zip(gw.complete_batch(&prompts, &SamplingParams::generation()))
    {
        let raw = r.with_context(|| format!("generating for {term:?}"))?;
        match parse_bilingual_generation(&raw, &a.langs.src, &a.langs.tgt, &mut factory) {
            Ok(parsed) => {
                if parsed.skipped > 0 {
                    log::warn!("{term}: skipped {} unparseable line(s)", parsed.skipped);
                }
                units.extend(parsed.units);
            }
            Err(PipelineError::NoValidRecords { skipped }) => {
                log::warn!("{term}: no sentence pairs in the output ({skipped} line(s))");
            }
            Err(e) => return Err(e.into()),
        }
    }
    if units.is_empty() {
        bail!("no sentence pairs could be parsed from any generation");
    }
    write_units(&units, a.out.as_deref(), out)
}

fn synth_parse(a: &SynthParseArgs, out: Out) -> Result<()> {
    let raw = fs::read_to_string(&a.input).with_context(|| a.input.display().to_string())?;
    let parsed = parse_bilingual_generation(&raw, &a.langs.src, &a.langs.tgt, &mut UnitFactory::seeded(a.seed, 0))?;
    if parsed.skipped > 0 {
        log::warn!("skipped {} unparseable line(s)", parsed.skipped);
    }
    write_units(&parsed.units, a.out.as_deref(), out)
}

#[derive(Deserialize)]
struct TranslationItem {
    translation: String,
    terms: Vec<TermPair>,
}

fn evaluate_terms(a: &EvaluateTermsArgs, out: Out) -> Result<()> {
    let rows: Vec<UsageRow> = match (&a.rows, &a.translations) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str(&text).with_context(|| p.display().to_string())?
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
            let items = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<Vec<TranslationItem>, _>>()
                .with_context(|| p.display().to_string())?;
            let c = count_usage(
                items.iter().map(|i| (i.translation.as_str(), i.terms.as_slice())),
                TermMatchMode::Auto,
                None,
            );
            vec![UsageRow::new(&a.system, &a.term_set, c.used, c.total)]
        }
        (None, None) => bail!("give --rows or --translations"),
    };
    let report = usage_report(rows)?;
    out.emit(&report, || {
        report
            .systems
            .iter()
            .map(|s| format!("{}\t{:.2}\n", s.system, s.avg_pct))
            .collect()
    })
}

fn serve(a: &ServeArgs) -> Result<()> {
    let mut cfg = match &a.server_config {
        Some(p) => adaptmt_server::ServerConfig::load(p)?,
        None => adaptmt_server::ServerConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(b) = &a.bind {
        cfg.bind = b.clone();
    }
    if let Some(d) = &a.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(k) = &a.api_key {
        cfg.api_key = Some(k.clone());
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(adaptmt_server::serve(cfg)).map_err(|e| anyhow::anyhow!(e))
}
