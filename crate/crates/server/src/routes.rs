use std::sync::Arc;
use std::time::{Duration, Instant};

use adaptmt::gateway::{truncate_overgeneration, GatewaySampler, TruncateMode};
use adaptmt::model::{FuzzyMatch, LangCode, Origin, RawUnit, SamplingParams, TermPair, TranslationUnit};
use adaptmt::prompts::{render, render_term_ape, render_term_extract, PromptSpec, RenderedPrompt, Shot};
use adaptmt::retrieval::{ProjectIndex, RetrievalConfig};
use adaptmt::terminology::{
    compile_glossary, count_usage, match_terms, missing_terms_with, parse_extracted_terms, terms_in_source,
    usage_report, Glossary, GlossaryOptions, Stopwords, TermMatchMode, TermUsageReport, UsageRow,
};
use adaptmt::tm::Project;
use adaptmt::wlac::{autocomplete, UnicodeTokenizer, WlacQuery, WlacResult};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RefreshMode;
use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, ProjectSlot, ProjectState};

type AppRef = State<Arc<AppState>>;

fn slot(app: &AppState, id: &str) -> ApiResult<ProjectSlot> {
    app.project(id).ok_or_else(|| ApiError::not_found("project", id))
}

fn lang(code: &str) -> ApiResult<LangCode> {
    LangCode::from_code(code).map_err(|e| ApiError::unprocessable("invalid_lang", e.to_string()))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable("malformed", e.to_string()))
}

fn store_failed(e: impl std::fmt::Display) -> ApiError {
    ApiError::internal(format!("persisting failed: {e}"))
}

pub async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Debug, Serialize)]
pub struct ProjectInfo {
    pub id: String,
    pub name: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub tm_size: usize,
    pub indexed: usize,
    pub index_stale: bool,
    pub glossary_size: Option<usize>,
}

fn info(ps: &ProjectState) -> ProjectInfo {
    ProjectInfo {
        id: ps.project.id().to_string(),
        name: ps.project.name().to_string(),
        src_lang: ps.project.src_lang().code().to_string(),
        tgt_lang: ps.project.tgt_lang().code().to_string(),
        tm_size: ps.project.len(),
        indexed: ps.index.as_ref().map_or(0, |i| i.indexed()),
        index_stale: ps.index_stale(),
        glossary_size: ps.glossary.as_ref().map(Glossary::len),
    }
}

#[derive(Deserialize)]
pub struct CreateProject {
    id: String,
    #[serde(default)]
    name: Option<String>,
    src_lang: String,
    tgt_lang: String,
}

pub async fn create_project(State(app): AppRef, body: Bytes) -> ApiResult<Response> {
    let req: CreateProject = parse_body(&body)?;
    if req.id.is_empty()
        || !req
            .id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(ApiError::unprocessable("invalid_id", "project ids use [A-Za-z0-9_-]"));
    }
    let project = Project::new(
        &req.id,
        req.name.as_deref().unwrap_or(&req.id),
        lang(&req.src_lang)?,
        lang(&req.tgt_lang)?,
    )
    .map_err(|e| ApiError::unprocessable("invalid_project", e.to_string()))?;
    let ps = ProjectState::new(project);
    let body = info(&ps);
    if let Some(store) = &app.store {
        if app.project(&req.id).is_none() {
            store.save_meta(&ps.project).map_err(store_failed)?;
        }
    }
    if !app.insert_project(ps) {
        return Err(ApiError::conflict(
            "project_exists",
            format!("project `{}` exists", req.id),
        ));
    }
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

pub async fn list_projects(State(app): AppRef) -> Json<Vec<ProjectInfo>> {
    let mut out = Vec::new();
    for id in app.project_ids() {
        if let Some(s) = app.project(&id) {
            out.push(info(&*s.read().await));
        }
    }
    Json(out)
}

pub async fn get_project(State(app): AppRef, Path(id): Path<String>) -> ApiResult<Json<ProjectInfo>> {
    let s = slot(&app, &id)?;
    let ps = s.read().await;
    Ok(Json(info(&ps)))
}

#[derive(Deserialize)]
struct UnitIn {
    source: String,
    target: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    origin: Option<Origin>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct UploadUnits {
    units: Vec<UnitIn>,
    /// `source<TAB>target` lines, appended after `units`.
    tsv: Option<String>,
}

#[derive(Serialize)]
struct Skipped {
    index: usize,
    reason: String,
}

pub async fn upload_units(State(app): AppRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: UploadUnits = parse_body(&body)?;
    let s = slot(&app, &id)?;
    let mut ps = s.write().await;
    let (src, tgt) = (ps.project.src_lang().clone(), ps.project.tgt_lang().clone());
    let mut raws: Vec<Result<RawUnit, String>> = req
        .units
        .into_iter()
        .map(|u| {
            let mut raw = RawUnit::new(&u.source, &u.target, &src, &tgt);
            raw.id = u.id;
            raw.origin = u.origin;
            Ok(raw)
        })
        .collect();
    for line in req
        .tsv
        .as_deref()
        .unwrap_or("")
        .lines()
        .filter(|l| !l.trim().is_empty())
    {
        raws.push(match line.split_once('\t') {
            Some((a, b)) if !b.contains('\t') => Ok(RawUnit::new(a, b, &src, &tgt)),
            _ => Err("expected exactly two tab-separated columns".into()),
        });
    }
    let mut valid = Vec::new();
    let mut skipped = Vec::new();
    app.with_factory(|f| {
        for (index, r) in raws.into_iter().enumerate() {
            match r.and_then(|raw| f.make(raw).map_err(|e| e.to_string())) {
                Ok(u) => valid.push(u),
                Err(reason) => skipped.push(Skipped { index, reason }),
            }
        }
    });
    if valid.is_empty() && !skipped.is_empty() {
        return Err(ApiError::unprocessable("no_valid_units", "no valid units in upload")
            .with_detail(json!({ "skipped": skipped })));
    }
    let before = ps.project.len();
    let added = ps
        .project
        .add_units(valid)
        .map_err(|e| ApiError::unprocessable("invalid_units", e.to_string()))?;
    if let Some(store) = &app.store {
        store
            .append_units(&id, &ps.project.units()[before..])
            .map_err(store_failed)?;
    }
    Ok(Json(json!({
        "added": added,
        "skipped": skipped,
        "tm_size": ps.project.len(),
        "index_stale": ps.index_stale(),
    }))
    .into_response())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct RebuildReq {
    nlist: Option<usize>,
}

pub async fn rebuild_index(
    State(app): AppRef,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req: RebuildReq = if body.is_empty() {
        RebuildReq::default()
    } else {
        parse_body(&body)?
    };
    let s = slot(&app, &id)?;
    let app2 = app.clone();
    tokio::task::spawn_blocking(move || {
        let mut ps = s.blocking_write();
        if ps.project.is_empty() {
            return Err(ApiError::conflict("empty_tm", "the translation memory is empty"));
        }
        let index = ProjectIndex::build(&ps.project, app2.embedder.as_ref(), req.nlist, app2.cfg.index_seed)
            .map_err(|e| ApiError::unprocessable("index_failed", e.to_string()))?;
        let out = json!({"indexed": index.indexed(), "nlist": index.ivf().nlist(), "seed": index.seed()});
        ps.index = Some(index);
        ps.pending_approvals = 0;
        Ok(Json(out))
    })
    .await?
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslateMode {
    ZeroShot,
    FuzzyK,
    FuzzyPlusMt,
    TermsZero,
    TermsFuzzy,
    TermsGlossary,
}

impl TranslateMode {
    fn uses_matches(self) -> bool {
        !matches!(self, TranslateMode::ZeroShot | TranslateMode::TermsZero)
    }

    fn uses_terms(self) -> bool {
        matches!(
            self,
            TranslateMode::TermsZero | TranslateMode::TermsFuzzy | TranslateMode::TermsGlossary
        )
    }

    fn uses_glossary(self) -> bool {
        matches!(self, TranslateMode::TermsZero | TranslateMode::TermsGlossary)
    }
}

#[derive(Deserialize)]
pub struct TranslateRequest {
    source: String,
    mode: TranslateMode,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    max_terms: Option<usize>,
    #[serde(default)]
    include_trace: bool,
}

#[derive(Debug, Serialize)]
pub struct MatchSummary {
    pub unit_id: String,
    pub source: String,
    pub target: String,
    pub similarity: f64,
}

#[derive(Debug, Serialize)]
pub struct TranslateResponse {
    pub translation: String,
    pub fuzzy_matches: Vec<MatchSummary>,
    pub terms_used_in_prompt: Vec<TermPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_trace: Option<RenderedPrompt>,
    pub latency_ms: u64,
}

/// Everything gathered under the read lock for one translate call.
struct Gathered {
    src: LangCode,
    tgt: LangCode,
    matches: Vec<FuzzyMatch>,
    glossary: Option<Glossary>,
    extracted: Vec<Option<Vec<TermPair>>>,
}

fn extract_terms(app: &AppState, units: &[&TranslationUnit]) -> ApiResult<Vec<Vec<TermPair>>> {
    if units.is_empty() {
        return Ok(Vec::new());
    }
    let prompts = units
        .iter()
        .map(|u| render_term_extract(u, app.cfg.term_extract_count, &app.cfg.term_separator))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let outputs = app.gateway.complete_batch(&prompts, &SamplingParams::extraction());
    outputs
        .into_iter()
        .map(|r| {
            let text = r.map_err(|e| ApiError::backend(e.to_string()))?;
            // The prompt ends with "1." so the reply starts mid-list.
            let full = format!("1.{text}");
            Ok(parse_extracted_terms(&full, &app.cfg.term_separator)
                .map(|p| p.terms)
                .unwrap_or_default())
        })
        .collect()
}

fn auxiliary_mt(app: &AppState, src: &LangCode, tgt: &LangCode, source: &str) -> ApiResult<String> {
    let mt = app
        .mt
        .as_ref()
        .ok_or_else(|| ApiError::unprocessable("no_mt_provider", "fuzzy_plus_mt needs an mt_backend"))?;
    let prompt = render(&PromptSpec::ZeroShot {
        src_lang: src.clone(),
        tgt_lang: tgt.clone(),
        segment: source.to_string(),
    })
    .map_err(|e| ApiError::unprocessable("bad_segment", e.to_string()))?;
    mt.translate_batch(&[prompt], &SamplingParams::translation(), tgt)
        .pop()
        .expect("one prompt in, one result out")
        .map_err(|e| ApiError::backend(e.to_string()))
}

fn translate_blocking(app: &AppState, s: &ProjectSlot, req: &TranslateRequest) -> ApiResult<TranslateResponse> {
    let started = Instant::now();
    let max_terms = req.max_terms.unwrap_or(0);
    let g = {
        let ps = s.blocking_read();
        let mut matches = Vec::new();
        if req.mode.uses_matches() {
            let index = match &ps.index {
                None => return Err(ApiError::conflict("index_missing", "build the index first")),
                Some(i) if i.is_stale(&ps.project) => {
                    return Err(ApiError::conflict("index_stale", "the index is older than the TM")
                        .with_detail(json!({"indexed": i.indexed(), "tm_size": ps.project.len()})))
                }
                Some(i) => i,
            };
            let cfg = RetrievalConfig {
                top_k: req.k.unwrap_or(1),
                exclude_exact_self: false,
                min_similarity: -1.0,
                nprobe: app.cfg.nprobe,
            };
            matches = index
                .top_fuzzy(&ps.project, app.embedder.as_ref(), &req.source, &cfg)
                .map_err(|e| ApiError::unprocessable("retrieval_failed", e.to_string()))?;
        }
        let glossary = if req.mode.uses_glossary() {
            Some(
                ps.glossary
                    .clone()
                    .ok_or_else(|| ApiError::conflict("glossary_missing", "compile the glossary first"))?,
            )
        } else {
            None
        };
        let extracted = if req.mode == TranslateMode::TermsFuzzy {
            matches
                .iter()
                .map(|m| ps.extracted.get(m.unit.id().as_str()).cloned())
                .collect()
        } else {
            Vec::new()
        };
        Gathered {
            src: ps.project.src_lang().clone(),
            tgt: ps.project.tgt_lang().clone(),
            matches,
            glossary,
            extracted,
        }
    };

    let mut shots: Vec<Shot> = g.matches.iter().cloned().map(Shot::from).collect();
    let mut terms = Vec::new();
    match req.mode {
        TranslateMode::TermsFuzzy => {
            let todo: Vec<&TranslationUnit> = g
                .matches
                .iter()
                .zip(&g.extracted)
                .filter(|(_, e)| e.is_none())
                .map(|(m, _)| &m.unit)
                .collect();
            let fresh = extract_terms(app, &todo)?;
            if !fresh.is_empty() {
                let mut ps = s.blocking_write();
                for (u, t) in todo.iter().zip(&fresh) {
                    ps.extracted.insert(u.id().to_string(), t.clone());
                }
            }
            let mut fresh = fresh.into_iter();
            for (shot, cached) in shots.iter_mut().zip(&g.extracted) {
                let all = match cached {
                    Some(t) => t.clone(),
                    None => fresh.next().unwrap_or_default(),
                };
                shot.terms = terms_in_source(shot.fuzzy.unit.source(), &all, &g.src, max_terms)
                    .map_err(|e| ApiError::unprocessable("bad_terms", e.to_string()))?;
            }
            // Best match first, so its terms win when the cap applies.
            let pool: Vec<TermPair> = shots.iter().flat_map(|s| s.terms.iter().cloned()).collect();
            terms = terms_in_source(&req.source, &pool, &g.src, max_terms)
                .map_err(|e| ApiError::unprocessable("bad_terms", e.to_string()))?;
        }
        TranslateMode::TermsGlossary | TranslateMode::TermsZero => {
            let glossary = g.glossary.as_ref().expect("glossary gathered for glossary modes");
            let m = |text: &str| {
                match_terms(text, glossary, max_terms).map_err(|e| ApiError::unprocessable("bad_terms", e.to_string()))
            };
            for shot in shots.iter_mut() {
                shot.terms = m(shot.fuzzy.unit.source())?;
            }
            terms = m(&req.source)?;
        }
        _ => {}
    }

    let (src_lang, tgt_lang, segment) = (g.src.clone(), g.tgt.clone(), req.source.clone());
    let spec = if shots.is_empty() {
        if req.mode.uses_terms() {
            PromptSpec::ZeroShotTerms {
                src_lang,
                tgt_lang,
                segment,
                terms: terms.clone(),
            }
        } else {
            PromptSpec::ZeroShot {
                src_lang,
                tgt_lang,
                segment,
            }
        }
    } else {
        match req.mode {
            TranslateMode::FuzzyK => PromptSpec::FewShot {
                src_lang,
                tgt_lang,
                segment,
                shots,
            },
            TranslateMode::FuzzyPlusMt => {
                let mt = auxiliary_mt(app, &g.src, &g.tgt, &req.source)?;
                PromptSpec::FewShotOneMt {
                    src_lang,
                    tgt_lang,
                    segment,
                    shots,
                    mt,
                }
            }
            TranslateMode::TermsFuzzy => PromptSpec::FewShotFuzzyTerms {
                src_lang,
                tgt_lang,
                segment,
                shots,
                terms: terms.clone(),
            },
            TranslateMode::TermsGlossary => PromptSpec::FewShotGlossaryTerms {
                src_lang,
                tgt_lang,
                segment,
                shots,
                terms: terms.clone(),
            },
            TranslateMode::ZeroShot | TranslateMode::TermsZero => unreachable!("no shots for zero-shot modes"),
        }
    };
    let prompt = render(&spec).map_err(|e| ApiError::unprocessable("prompt_failed", e.to_string()))?;
    let translation = app
        .gateway
        .translate_batch(std::slice::from_ref(&prompt), &SamplingParams::translation(), &g.tgt)
        .pop()
        .expect("one prompt in, one result out")
        .map_err(|e| ApiError::backend(e.to_string()))?;
    Ok(TranslateResponse {
        translation,
        fuzzy_matches: g
            .matches
            .iter()
            .map(|m| MatchSummary {
                unit_id: m.unit.id().to_string(),
                source: m.unit.source().to_string(),
                target: m.unit.target().to_string(),
                similarity: m.similarity,
            })
            .collect(),
        terms_used_in_prompt: terms,
        prompt_trace: req.include_trace.then_some(prompt),
        latency_ms: started.elapsed().as_millis() as u64,
    })
}

pub async fn translate(State(app): AppRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<TranslateResponse>> {
    let req: TranslateRequest = parse_body(&body)?;
    if req.source.trim().is_empty() {
        return Err(ApiError::unprocessable("empty_source", "source is empty"));
    }
    if req.mode.uses_matches() && !req.k.is_some_and(|k| k >= 1) {
        return Err(ApiError::unprocessable("missing_k", "fuzzy modes need k >= 1"));
    }
    if req.mode.uses_terms() && !req.max_terms.is_some_and(|m| m >= 1) {
        return Err(ApiError::unprocessable(
            "missing_max_terms",
            "terms modes need max_terms >= 1",
        ));
    }
    let s = slot(&app, &id)?;
    let out = tokio::task::spawn_blocking(move || translate_blocking(&app, &s, &req)).await??;
    Ok(Json(out))
}

#[derive(Deserialize)]
pub struct AutocompleteRequest {
    source: String,
    #[serde(default)]
    left: Option<String>,
    #[serde(default)]
    right: Option<String>,
    typed: String,
}

#[derive(Serialize)]
pub struct AutocompleteResponse {
    #[serde(flatten)]
    result: WlacResult,
    timed_out: bool,
}

pub async fn autocomplete_word(State(app): AppRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: AutocompleteRequest = parse_body(&body)?;
    let s = slot(&app, &id)?;
    let (src, tgt) = {
        let ps = s.read().await;
        (ps.project.src_lang().clone(), ps.project.tgt_lang().clone())
    };
    let query = WlacQuery {
        source: req.source,
        left_context: req.left,
        right_context: req.right,
        typed: req.typed,
    };
    query
        .validate()
        .map_err(|e| ApiError::unprocessable("invalid_query", e.to_string()))?;
    let sampler = GatewaySampler::new(app.gateway.clone(), src, tgt);
    let cfg = app.cfg.wlac.clone();
    let deadline = Duration::from_millis(app.cfg.autocomplete_deadline_ms);
    let task = tokio::task::spawn_blocking(move || autocomplete(&query, &sampler, &UnicodeTokenizer, &cfg));
    match tokio::time::timeout(deadline, task).await {
        Err(_) => Ok((
            StatusCode::GATEWAY_TIMEOUT,
            Json(
                json!({"word": null, "timed_out": true, "code": "deadline", "message": "autocomplete deadline passed"}),
            ),
        )
            .into_response()),
        Ok(joined) => {
            let result = joined?.map_err(|e| ApiError::backend(e.to_string()))?;
            Ok(Json(AutocompleteResponse {
                result,
                timed_out: false,
            })
            .into_response())
        }
    }
}

#[derive(Deserialize)]
pub struct ApproveRequest {
    source: String,
    edited_target: String,
}

pub async fn approve(State(app): AppRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: ApproveRequest = parse_body(&body)?;
    if req.source.trim().is_empty() || req.edited_target.trim().is_empty() {
        return Err(ApiError::unprocessable(
            "empty_side",
            "source and edited_target must be non-empty",
        ));
    }
    let s = slot(&app, &id)?;
    let app2 = app.clone();
    let s2 = s.clone();
    let (out, schedule) = tokio::task::spawn_blocking(move || {
        let mut ps = s2.blocking_write();
        let before = ps.project.len();
        let unit = app2
            .with_factory(|f| ps.project.approve_edit(f, &req.source, &req.edited_target))
            .map_err(|e| ApiError::unprocessable("empty_side", e.to_string()))?;
        let added = ps.project.len() > before;
        if added {
            if let Some(store) = &app2.store {
                store
                    .append_units(&id, std::slice::from_ref(&unit))
                    .map_err(store_failed)?;
            }
            ps.pending_approvals += 1;
        }
        let mut refreshed = false;
        let mut schedule = false;
        if added && ps.index.is_some() && ps.pending_approvals >= app2.cfg.rebuild_after {
            match app2.cfg.refresh {
                RefreshMode::Sync => {
                    let ProjectState { project, index, .. } = &mut *ps;
                    index
                        .as_mut()
                        .expect("checked above")
                        .refresh(project, app2.embedder.as_ref())
                        .map_err(|e| ApiError::unprocessable("index_failed", e.to_string()))?;
                    ps.pending_approvals = 0;
                    refreshed = true;
                }
                RefreshMode::Background => schedule = true,
            }
        }
        Ok::<_, ApiError>((
            json!({
                "unit_id": unit.id().to_string(),
                "tm_size": ps.project.len(),
                "added": added,
                "index_refreshed": refreshed,
            }),
            schedule,
        ))
    })
    .await??;
    if schedule {
        tokio::task::spawn_blocking(move || {
            let mut ps = s.blocking_write();
            let ProjectState { project, index, .. } = &mut *ps;
            if let Some(i) = index.as_mut() {
                if let Err(e) = i.refresh(project, app.embedder.as_ref()) {
                    log::warn!("background index refresh failed: {e}");
                }
            }
            ps.pending_approvals = 0;
        });
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
pub struct ApeRequest {
    source: String,
    translation: String,
    term_set: Vec<TermPair>,
}

#[derive(Serialize)]
pub struct ApeResponse {
    post_edited: String,
    missing_before: Vec<TermPair>,
    missing_after: Vec<TermPair>,
    backend_called: bool,
    temperature: Option<f64>,
}

const APE_TEMPERATURES: [f64; 2] = [0.0, 0.2];

pub async fn term_ape(State(app): AppRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<ApeResponse>> {
    let req: ApeRequest = parse_body(&body)?;
    if req.translation.trim().is_empty() {
        return Err(ApiError::unprocessable("empty_translation", "translation is empty"));
    }
    let s = slot(&app, &id)?;
    let (src, tgt) = {
        let ps = s.read().await;
        (ps.project.src_lang().clone(), ps.project.tgt_lang().clone())
    };
    let out = tokio::task::spawn_blocking(move || {
        let missing = |t: &str| missing_terms_with(t, &req.term_set, TermMatchMode::Auto, Some(&tgt));
        let missing_before = missing(&req.translation);
        if missing_before.is_empty() {
            return Ok(ApeResponse {
                post_edited: req.translation.clone(),
                missing_after: Vec::new(),
                missing_before,
                backend_called: false,
                temperature: None,
            });
        }
        let prompt = render_term_ape(&src, &tgt, &req.source, &req.translation, &missing_before)
            .map_err(|e| ApiError::unprocessable("prompt_failed", e.to_string()))?;
        let mut best: Option<(String, Vec<TermPair>, f64)> = None;
        for t in APE_TEMPERATURES {
            let params = SamplingParams {
                temperature: t,
                ..SamplingParams::translation()
            };
            let text = app
                .gateway
                .translate_batch(std::slice::from_ref(&prompt), &params, &tgt)
                .pop()
                .expect("one prompt in, one result out")
                .map_err(|e| ApiError::backend(e.to_string()))?;
            let text = truncate_overgeneration(&text, TruncateMode::FirstLine);
            let after = missing(&text);
            // Strictly fewer missing terms needed to displace the earlier run.
            if best.as_ref().is_none_or(|b| after.len() < b.1.len()) {
                best = Some((text, after, t));
            }
        }
        let (post_edited, missing_after, temperature) = best.expect("two temperatures ran");
        Ok::<_, ApiError>(ApeResponse {
            post_edited,
            missing_before,
            missing_after,
            backend_called: true,
            temperature: Some(temperature),
        })
    })
    .await??;
    Ok(Json(out))
}

#[derive(Deserialize, Default)]
#[serde(default)]
pub struct CompileRequest {
    /// Term occurrences to compile; extracted from the TM when absent.
    occurrences: Option<Vec<TermPair>>,
    min_frequency: Option<u32>,
    max_ngram: Option<usize>,
    drop_overlapping: Option<bool>,
}

pub async fn compile(State(app): AppRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: CompileRequest = if body.is_empty() {
        CompileRequest::default()
    } else {
        parse_body(&body)?
    };
    let s = slot(&app, &id)?;
    let out = tokio::task::spawn_blocking(move || {
        let mut opts = GlossaryOptions::default();
        if let Some(v) = req.min_frequency {
            opts.min_frequency = v;
        }
        if let Some(v) = req.max_ngram {
            opts.max_ngram = v;
        }
        if let Some(v) = req.drop_overlapping {
            opts.drop_overlapping = v;
        }
        let mut ps = s.blocking_write();
        let occurrences = match req.occurrences {
            Some(o) => o,
            None => {
                let todo: Vec<TranslationUnit> = ps
                    .project
                    .units()
                    .iter()
                    .filter(|u| !ps.extracted.contains_key(u.id().as_str()))
                    .cloned()
                    .collect();
                let refs: Vec<&TranslationUnit> = todo.iter().collect();
                for (u, t) in todo.iter().zip(extract_terms(&app, &refs)?) {
                    ps.extracted.insert(u.id().to_string(), t);
                }
                ps.project
                    .units()
                    .iter()
                    .flat_map(|u| ps.extracted[u.id().as_str()].iter().cloned())
                    .collect()
            }
        };
        let (src, tgt) = (ps.project.src_lang().clone(), ps.project.tgt_lang().clone());
        let stop = Stopwords::builtin(&src, &tgt);
        let glossary = compile_glossary(&occurrences, &stop, &opts, src, tgt);
        if let Some(store) = &app.store {
            store.save_glossary(&id, &glossary).map_err(store_failed)?;
        }
        let out = json!({"size": glossary.len(), "entries": glossary.entries()});
        ps.glossary = Some(glossary);
        Ok::<_, ApiError>(out)
    })
    .await??;
    Ok(Json(out))
}

pub async fn get_glossary(State(app): AppRef, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = slot(&app, &id)?;
    let ps = s.read().await;
    let g = ps
        .glossary
        .as_ref()
        .ok_or_else(|| ApiError::not_found("glossary", &id))?;
    Ok(Json(json!({"size": g.len(), "entries": g.entries()})))
}

#[derive(Deserialize)]
struct EvalItem {
    translation: String,
    term_set: Vec<TermPair>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EvalRequest {
    Rows {
        rows: Vec<UsageRow>,
    },
    Items {
        items: Vec<EvalItem>,
        #[serde(default)]
        system: Option<String>,
        #[serde(default)]
        term_set: Option<String>,
    },
}

pub async fn evaluate_terms(
    State(app): AppRef,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<TermUsageReport>> {
    let req: EvalRequest = parse_body(&body)?;
    let s = slot(&app, &id)?;
    let tgt = s.read().await.project.tgt_lang().clone();
    let rows = match req {
        EvalRequest::Rows { rows } => rows,
        EvalRequest::Items {
            items,
            system,
            term_set,
        } => {
            let c = count_usage(
                items.iter().map(|i| (i.translation.as_str(), i.term_set.as_slice())),
                TermMatchMode::Auto,
                Some(&tgt),
            );
            vec![UsageRow::new(
                system.as_deref().unwrap_or("system"),
                term_set.as_deref().unwrap_or("1"),
                c.used,
                c.total,
            )]
        }
    };
    if rows.is_empty() {
        return Err(ApiError::unprocessable("malformed", "no rows to evaluate"));
    }
    usage_report(rows)
        .map(Json)
        .map_err(|e| ApiError::unprocessable("malformed", e.to_string()))
}
