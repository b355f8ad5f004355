//! Fuzzy-match retrieval over a project's translation memory.
//!
//! [`ProjectIndex`] embeds unit sources into an [`IvfIndex`] keyed by the
//! unit's position in the TM. New units can be appended with
//! [`ProjectIndex::refresh`], which files them under the existing centroids;
//! [`ProjectIndex::build`] retrains from scratch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::ivf::{default_nlist, AnnError, IvfIndex, Metric, SearchParams};
use crate::model::FuzzyMatch;
use crate::tm::Project;

/// Clusters probed per query unless configured otherwise.
pub const DEFAULT_NPROBE: usize = 32;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("index covers {indexed} units but the TM has {tm}")]
    IndexStale { indexed: usize, tm: usize },
    #[error("translation memory is empty")]
    EmptyTm,
    #[error("histogram edges must be strictly ascending with at least two values")]
    BadEdges,
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ann(#[from] AnnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub top_k: usize,
    /// Drop stored units whose source string equals the query exactly.
    pub exclude_exact_self: bool,
    /// Matches below this similarity are dropped; -1 keeps everything.
    pub min_similarity: f64,
    /// Clusters to scan; `None` uses [`DEFAULT_NPROBE`] capped at `nlist`.
    #[serde(default)]
    pub nprobe: Option<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_k: 10,
            exclude_exact_self: true,
            min_similarity: -1.0,
            nprobe: None,
        }
    }
}

impl RetrievalConfig {
    pub fn top(k: usize) -> Self {
        RetrievalConfig {
            top_k: k,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), RetrievalError> {
        if self.top_k == 0 {
            return Err(RetrievalError::Config("top_k must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.min_similarity) {
            return Err(RetrievalError::Config("min_similarity must be in [-1, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProjectIndex {
    index: IvfIndex,
    indexed: usize,
    seed: u64,
}

impl ProjectIndex {
    /// Trains an index over every unit in `project`. `nlist` defaults to
    /// [`default_nlist`] of the TM size.
    pub fn build(
        project: &Project,
        embedder: &dyn Embedder,
        nlist: Option<usize>,
        seed: u64,
    ) -> Result<Self, RetrievalError> {
        if project.is_empty() {
            return Err(RetrievalError::EmptyTm);
        }
        let sources: Vec<&str> = project.units().iter().map(|u| u.source()).collect();
        let vectors = embedder.embed_batch(&sources)?;
        let nlist = nlist.unwrap_or_else(|| default_nlist(vectors.len())).min(vectors.len());
        let mut index = IvfIndex::train(&vectors, nlist, Metric::Cosine, seed)?;
        for (i, v) in vectors.iter().enumerate() {
            index.add(i as u64, v)?;
        }
        Ok(ProjectIndex {
            index,
            indexed: vectors.len(),
            seed,
        })
    }

    /// Adds units appended to the TM since the last build or refresh.
    /// Returns how many were added.
    pub fn refresh(&mut self, project: &Project, embedder: &dyn Embedder) -> Result<usize, RetrievalError> {
        let new = &project.units()[self.indexed.min(project.len())..];
        if new.is_empty() {
            return Ok(0);
        }
        let sources: Vec<&str> = new.iter().map(|u| u.source()).collect();
        let vectors = embedder.embed_batch(&sources)?;
        for (offset, v) in vectors.iter().enumerate() {
            self.index.add((self.indexed + offset) as u64, v)?;
        }
        self.indexed += vectors.len();
        Ok(vectors.len())
    }

    pub fn is_stale(&self, project: &Project) -> bool {
        self.indexed != project.len()
    }

    pub fn indexed(&self) -> usize {
        self.indexed
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ivf(&self) -> &IvfIndex {
        &self.index
    }

    /// Up to `cfg.top_k` matches for `source`, most similar first.
    pub fn top_fuzzy(
        &self,
        project: &Project,
        embedder: &dyn Embedder,
        source: &str,
        cfg: &RetrievalConfig,
    ) -> Result<Vec<FuzzyMatch>, RetrievalError> {
        cfg.validate()?;
        if project.is_empty() {
            return Err(RetrievalError::EmptyTm);
        }
        if self.is_stale(project) {
            return Err(RetrievalError::IndexStale {
                indexed: self.indexed,
                tm: project.len(),
            });
        }
        let same_source = if cfg.exclude_exact_self {
            project.units().iter().filter(|u| u.source() == source).count()
        } else {
            0
        };
        let nprobe = cfg.nprobe.unwrap_or(DEFAULT_NPROBE).clamp(1, self.index.nlist());
        let query = embedder.embed(source)?;
        let hits = self
            .index
            .search(&query, SearchParams::new(cfg.top_k + same_source, nprobe))?;
        let mut out = Vec::with_capacity(cfg.top_k);
        for (id, score) in hits {
            let unit = &project.units()[id as usize];
            if cfg.exclude_exact_self && unit.source() == source {
                continue;
            }
            if score < cfg.min_similarity {
                break;
            }
            out.push(FuzzyMatch::new(unit.clone(), score).expect("cosine is clamped to [-1, 1]"));
            if out.len() == cfg.top_k {
                break;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub bucket_edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i + 1])`.
    pub counts: Vec<usize>,
    /// Similarities below the first or at/above the last edge.
    pub out_of_range: usize,
}

impl SimilarityHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Default bucket edges; the last edge sits just above 1 so exact matches
/// fall in the top bucket.
pub fn default_edges() -> Vec<f64> {
    vec![0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0 + 1e-9]
}

/// Buckets every match similarity into half-open `[lo, hi)` bins.
pub fn match_stats(
    matches_per_query: &[Vec<FuzzyMatch>],
    edges: &[f64],
) -> Result<SimilarityHistogram, RetrievalError> {
    if edges.len() < 2
        || edges
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(RetrievalError::BadEdges);
    }
    let mut counts = vec![0; edges.len() - 1];
    let mut out_of_range = 0;
    for m in matches_per_query.iter().flatten() {
        // first edge strictly greater than the value closes its bucket
        let upper = edges.partition_point(|e| *e <= m.similarity);
        if upper == 0 || upper == edges.len() {
            out_of_range += 1;
        } else {
            counts[upper - 1] += 1;
        }
    }
    Ok(SimilarityHistogram {
        bucket_edges: edges.to_vec(),
        counts,
        out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::model::{validate_unit, LangCode, RawUnit};

    fn project(pairs: &[(&str, &str)]) -> Project {
        let en = LangCode::from_code("en").unwrap();
        let es = LangCode::from_code("es").unwrap();
        let mut p = Project::new("p", "p", en.clone(), es.clone()).unwrap();
        p.add_units(
            pairs
                .iter()
                .map(|(s, t)| validate_unit(RawUnit::new(s, t, &en, &es)).unwrap()),
        )
        .unwrap();
        p
    }

    fn m(sim: f64) -> FuzzyMatch {
        let en = LangCode::from_code("en").unwrap();
        let es = LangCode::from_code("es").unwrap();
        FuzzyMatch::new(validate_unit(RawUnit::new("a", "b", &en, &es)).unwrap(), sim).unwrap()
    }

    #[test]
    fn identical_query_ranks_first_when_not_excluded() {
        let p = project(&[
            ("the fever is high", "la fiebre es alta"),
            ("a cough", "una tos"),
            ("wash hands", "lavar manos"),
        ]);
        let e = HashEmbedder::new(128, true);
        let idx = ProjectIndex::build(&p, &e, Some(2), 1).unwrap();
        let cfg = RetrievalConfig {
            exclude_exact_self: false,
            ..RetrievalConfig::top(10)
        };
        let got = idx.top_fuzzy(&p, &e, "a cough", &cfg).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].unit.source(), "a cough");
        assert!((got[0].similarity - 1.0).abs() < 1e-6);
        assert!(got.windows(2).all(|w| w[0].similarity >= w[1].similarity));

        let excl = idx.top_fuzzy(&p, &e, "a cough", &RetrievalConfig::top(10)).unwrap();
        assert_eq!(excl.len(), 2);
        assert!(excl.iter().all(|m| m.unit.source() != "a cough"));
    }

    #[test]
    fn stale_index_and_refresh() {
        let mut p = project(&[("one", "uno"), ("two", "dos")]);
        let e = HashEmbedder::new(64, true);
        let mut idx = ProjectIndex::build(&p, &e, Some(1), 0).unwrap();
        let mut f = crate::model::UnitFactory::default();
        p.approve_edit(&mut f, "three", "tres").unwrap();
        assert!(matches!(
            idx.top_fuzzy(&p, &e, "three", &RetrievalConfig::top(1)),
            Err(RetrievalError::IndexStale { indexed: 2, tm: 3 })
        ));
        assert_eq!(idx.refresh(&p, &e).unwrap(), 1);
        let cfg = RetrievalConfig {
            exclude_exact_self: false,
            ..RetrievalConfig::top(1)
        };
        let got = idx.top_fuzzy(&p, &e, "three", &cfg).unwrap();
        assert_eq!(got[0].unit.target(), "tres");
    }

    #[test]
    fn min_similarity_filters() {
        let p = project(&[("alpha beta", "x"), ("zzzz qqqq", "y")]);
        let e = HashEmbedder::new(256, true);
        let idx = ProjectIndex::build(&p, &e, Some(1), 0).unwrap();
        let cfg = RetrievalConfig {
            exclude_exact_self: false,
            min_similarity: 0.99,
            ..RetrievalConfig::top(5)
        };
        let got = idx.top_fuzzy(&p, &e, "alpha beta", &cfg).unwrap();
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn empty_tm() {
        let p = project(&[]);
        let e = HashEmbedder::new(64, true);
        assert!(matches!(
            ProjectIndex::build(&p, &e, None, 0),
            Err(RetrievalError::EmptyTm)
        ));
    }

    #[test]
    fn histogram_boundary_is_half_open() {
        let h = match_stats(&[vec![m(0.5)]], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(h.counts, vec![0, 1]);
        let h = match_stats(&[], &default_edges()).unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));
        let h = match_stats(&[vec![m(1.0), m(-0.2)]], &default_edges()).unwrap();
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.out_of_range, 1);
    }

    #[test]
    fn histogram_counts_everything_once() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let qs: Vec<Vec<FuzzyMatch>> = (0..10)
            .map(|_| (0..10).map(|_| m(rng.random_range(0.0..1.0))).collect())
            .collect();
        let h = match_stats(&qs, &default_edges()).unwrap();
        assert_eq!(h.total() + h.out_of_range, 100);
        assert_eq!(h.out_of_range, 0);
    }

    #[test]
    fn bad_edges() {
        assert!(matches!(match_stats(&[], &[0.0]), Err(RetrievalError::BadEdges)));
        assert!(matches!(
            match_stats(&[], &[0.0, 0.5, 0.5]),
            Err(RetrievalError::BadEdges)
        ));
    }
}
