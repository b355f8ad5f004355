use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use adaptmt::embed::Embedder;
use adaptmt::gateway::Gateway;
use adaptmt::model::{LangCode, TermPair, TranslationUnit, UnitFactory};
use adaptmt::retrieval::ProjectIndex;
use adaptmt::terminology::Glossary;
use adaptmt::tm::{append_unit, load_corpus, CorpusFile, Project};
use serde::{Deserialize, Serialize};

use crate::config::ServerConfig;

pub struct ProjectState {
    pub project: Project,
    pub index: Option<ProjectIndex>,
    pub glossary: Option<Glossary>,
    /// Terms extracted from TM units, keyed by unit id.
    pub extracted: HashMap<String, Vec<TermPair>>,
    pub pending_approvals: usize,
}

impl ProjectState {
    pub fn new(project: Project) -> Self {
        ProjectState {
            project,
            index: None,
            glossary: None,
            extracted: HashMap::new(),
            pending_approvals: 0,
        }
    }

    pub fn index_stale(&self) -> bool {
        !matches!(&self.index, Some(i) if !i.is_stale(&self.project))
    }
}

pub type ProjectSlot = Arc<tokio::sync::RwLock<ProjectState>>;

pub struct AppState {
    pub cfg: ServerConfig,
    pub gateway: Arc<Gateway>,
    pub mt: Option<Arc<Gateway>>,
    pub embedder: Arc<dyn Embedder>,
    pub store: Option<Store>,
    projects: RwLock<HashMap<String, ProjectSlot>>,
    factory: Mutex<UnitFactory>,
}

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("config: {0}")]
    Config(String),
    #[error("store: {0}")]
    Store(String),
}

impl AppState {
    /// Builds backends and the embedder from the config, then loads any
    /// persisted projects.
    pub fn from_config(cfg: ServerConfig) -> Result<Self, StateError> {
        cfg.validate().map_err(|e| StateError::Config(e.to_string()))?;
        let cfg_err = |e: &dyn std::fmt::Display| StateError::Config(e.to_string());
        let gateway = Gateway::from_config(cfg.backend.clone(), cfg.token_policy.clone()).map_err(|e| cfg_err(&e))?;
        let mt = match &cfg.mt_backend {
            Some(b) => Some(Arc::new(
                Gateway::from_config(b.clone(), cfg.token_policy.clone()).map_err(|e| cfg_err(&e))?,
            )),
            None => None,
        };
        let embedder: Arc<dyn Embedder> = Arc::from(cfg.embedder.build().map_err(|e| cfg_err(&e))?);
        Self::with_parts(cfg, Arc::new(gateway), mt, embedder)
    }

    pub fn with_parts(
        cfg: ServerConfig,
        gateway: Arc<Gateway>,
        mt: Option<Arc<Gateway>>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, StateError> {
        let store = cfg.data_dir.clone().map(Store::new);
        let state = AppState {
            cfg,
            gateway,
            mt,
            embedder,
            store,
            projects: RwLock::new(HashMap::new()),
            factory: Mutex::new(UnitFactory::default()),
        };
        if let Some(store) = &state.store {
            let loaded = store.load_all(&mut state.factory.lock().expect("factory lock"))?;
            for mut ps in loaded {
                if !ps.project.is_empty() {
                    ps.index =
                        ProjectIndex::build(&ps.project, state.embedder.as_ref(), None, state.cfg.index_seed).ok();
                }
                let id = ps.project.id().to_string();
                state
                    .projects
                    .write()
                    .expect("projects lock")
                    .insert(id, Arc::new(tokio::sync::RwLock::new(ps)));
            }
        }
        Ok(state)
    }

    pub fn project(&self, id: &str) -> Option<ProjectSlot> {
        self.projects.read().expect("projects lock").get(id).cloned()
    }

    pub fn project_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.projects.read().expect("projects lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Inserts a new project; `false` if the id is taken.
    pub fn insert_project(&self, ps: ProjectState) -> bool {
        let mut map = self.projects.write().expect("projects lock");
        let id = ps.project.id().to_string();
        if map.contains_key(&id) {
            return false;
        }
        map.insert(id, Arc::new(tokio::sync::RwLock::new(ps)));
        true
    }

    pub fn with_factory<T>(&self, f: impl FnOnce(&mut UnitFactory) -> T) -> T {
        f(&mut self.factory.lock().expect("factory lock"))
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    id: String,
    name: String,
    src_lang: LangCode,
    tgt_lang: LangCode,
}

/// One directory per project: `meta.json`, `units.jsonl`, `glossary.tsv`.
pub struct Store {
    root: PathBuf,
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> StateError {
    StateError::Store(format!("{}: {e}", path.display()))
}

impl Store {
    pub fn new(root: PathBuf) -> Self {
        Store { root }
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn save_meta(&self, p: &Project) -> Result<(), StateError> {
        let dir = self.dir(p.id());
        fs::create_dir_all(&dir).map_err(|e| store_err(&dir, e))?;
        let meta = Meta {
            id: p.id().to_string(),
            name: p.name().to_string(),
            src_lang: p.src_lang().clone(),
            tgt_lang: p.tgt_lang().clone(),
        };
        let path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&path, text).map_err(|e| store_err(&path, e))
    }

    pub fn append_units(&self, id: &str, units: &[TranslationUnit]) -> Result<(), StateError> {
        let path = self.dir(id).join("units.jsonl");
        for u in units {
            append_unit(&path, u).map_err(|e| store_err(&path, e))?;
        }
        Ok(())
    }

    pub fn save_glossary(&self, id: &str, g: &Glossary) -> Result<(), StateError> {
        let path = self.dir(id).join("glossary.tsv");
        g.save(&path).map_err(|e| store_err(&path, e))
    }

    fn load_all(&self, factory: &mut UnitFactory) -> Result<Vec<ProjectState>, StateError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(store_err(&self.root, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let dir = entry.map_err(|e| store_err(&self.root, e))?.path();
            let meta_path = dir.join("meta.json");
            if !meta_path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&meta_path).map_err(|e| store_err(&meta_path, e))?;
            let meta: Meta = serde_json::from_str(&text).map_err(|e| store_err(&meta_path, e))?;
            let mut project = Project::new(&meta.id, &meta.name, meta.src_lang.clone(), meta.tgt_lang.clone())
                .map_err(|e| store_err(&meta_path, e))?;
            let units_path = dir.join("units.jsonl");
            if units_path.is_file() {
                let file = CorpusFile::new(&units_path).map_err(|e| store_err(&units_path, e))?;
                match load_corpus(&file, &meta.src_lang, &meta.tgt_lang, factory) {
                    Ok(loaded) => {
                        project.add_units(loaded.units).map_err(|e| store_err(&units_path, e))?;
                    }
                    Err(adaptmt::tm::TmError::NoValidRecords(_)) => {}
                    Err(e) => return Err(store_err(&units_path, e)),
                }
            }
            let mut ps = ProjectState::new(project);
            let g_path = dir.join("glossary.tsv");
            if g_path.is_file() {
                ps.glossary =
                    Some(Glossary::load(&g_path, meta.src_lang, meta.tgt_lang).map_err(|e| store_err(&g_path, e))?);
            }
            out.push(ps);
        }
        Ok(out)
    }
}
