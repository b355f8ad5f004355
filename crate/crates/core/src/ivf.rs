//! Inverted-file flat (IVF-Flat) nearest-neighbour index.
//!
//! A k-means coarse quantizer partitions vectors into `nlist` clusters. Each
//! stored vector lives in exactly one posting list, that of its nearest
//! centroid under L2. A query ranks the centroids, scans the `nprobe` nearest
//! posting lists exhaustively and keeps the best `k`.
//!
//! With [`Metric::Cosine`] every vector is L2-normalized on the way in, so the
//! L2 quantizer and the inner-product score agree up to a monotone transform.
//! Ties on score are broken by ascending external id, which makes results
//! deterministic and lets `nprobe == nlist` reproduce an exhaustive scan
//! exactly.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{dot, Embedding};

pub const MAX_KMEANS_ITERS: usize = 25;
pub const KMEANS_TOLERANCE: f64 = 1e-4;

const MAGIC: &[u8; 4] = b"IVFF";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("need at least {nlist} vectors to train, got {got}")]
    TooFewVectors { nlist: usize, got: usize },
    #[error("dimension mismatch: index has {expected}, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index is not trained")]
    NotTrained,
    #[error("id {0} is already stored")]
    DuplicateId(u64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("zero vector cannot be stored under the cosine metric")]
    ZeroVector,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot version {found} is not supported (expected {SNAPSHOT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Inner product over unit vectors; higher is better.
    Cosine,
    /// Euclidean distance; lower is better.
    L2,
}

impl Metric {
    fn code(self) -> u32 {
        match self {
            Metric::Cosine => 0,
            Metric::L2 => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Metric::Cosine),
            1 => Some(Metric::L2),
            _ => None,
        }
    }

    /// Orders (id, score) hits best-first, ties by ascending id.
    pub fn compare_hits(self, a: &(u64, f64), b: &(u64, f64)) -> Ordering {
        let by_score = match self {
            Metric::Cosine => b.1.total_cmp(&a.1),
            Metric::L2 => a.1.total_cmp(&b.1),
        };
        by_score.then(a.0.cmp(&b.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    pub nprobe: usize,
}

impl SearchParams {
    pub fn new(k: usize, nprobe: usize) -> Self {
        SearchParams { k, nprobe }
    }
}

/// Cluster count for a corpus of `n` vectors: 4096 when that falls inside
/// the recommended `[4√n, 16√n]` band, otherwise `⌈4√n⌉` clamped to `[1, n]`.
pub fn default_nlist(n: usize) -> usize {
    let root = (n as f64).sqrt();
    if 4.0 * root <= 4096.0 && 4096.0 <= 16.0 * root && n >= 4096 {
        return 4096;
    }
    ((4.0 * root).ceil() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, PartialEq)]
struct Posting {
    id: u64,
    vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    dim: usize,
    nlist: usize,
    metric: Metric,
    /// Row-major `nlist × dim`; empty until trained.
    centroids: Vec<f64>,
    postings: Vec<Vec<Posting>>,
    ids: HashSet<u64>,
    trained: bool,
}

fn sq_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl IvfIndex {
    pub fn untrained(dim: usize, nlist: usize, metric: Metric) -> Self {
        IvfIndex {
            dim,
            nlist,
            metric,
            centroids: Vec::new(),
            postings: vec![Vec::new(); nlist],
            ids: HashSet::new(),
            trained: false,
        }
    }

    /// Trains the coarse quantizer with seeded k-means++ and Lloyd
    /// iterations. The returned index is empty; vectors are stored with
    /// [`IvfIndex::add`].
    pub fn train(vectors: &[Embedding], nlist: usize, metric: Metric, seed: u64) -> Result<Self, AnnError> {
        if nlist == 0 {
            return Err(AnnError::InvalidParams("nlist must be >= 1".into()));
        }
        if vectors.len() < nlist {
            return Err(AnnError::TooFewVectors {
                nlist,
                got: vectors.len(),
            });
        }
        let dim = vectors[0].dim();
        let mut index = IvfIndex::untrained(dim, nlist, metric);
        let data = vectors
            .iter()
            .map(|v| index.prepare(v))
            .collect::<Result<Vec<_>, _>>()?;
        index.centroids = kmeans(&data, dim, nlist, seed);
        index.trained = true;
        Ok(index)
    }

    fn prepare(&self, v: &Embedding) -> Result<Vec<f64>, AnnError> {
        if v.dim() != self.dim {
            return Err(AnnError::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        match self.metric {
            Metric::L2 => Ok(v.values().to_vec()),
            Metric::Cosine => v
                .normalized()
                .map(|n| n.values().to_vec())
                .map_err(|_| AnnError::ZeroVector),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nlist(&self) -> usize {
        self.nlist
    }
    pub fn metric(&self) -> Metric {
        self.metric
    }
    pub fn is_trained(&self) -> bool {
        self.trained
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn centroid(&self, list: usize) -> &[f64] {
        &self.centroids[list * self.dim..(list + 1) * self.dim]
    }

    /// Ids stored in each posting list.
    pub fn list_ids(&self) -> Vec<Vec<u64>> {
        self.postings.iter().map(|l| l.iter().map(|p| p.id).collect()).collect()
    }

    /// Centroid indices ordered by L2 distance to `v`, ties by index.
    fn ranked_lists(&self, v: &[f64]) -> Vec<usize> {
        let mut order: Vec<(usize, f64)> = (0..self.nlist).map(|c| (c, sq_l2(v, self.centroid(c)))).collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        order.into_iter().map(|(c, _)| c).collect()
    }

    fn nearest_list(&self, v: &[f64]) -> usize {
        nearest(v, &self.centroids, self.dim, self.nlist)
    }

    pub fn add(&mut self, id: u64, vector: &Embedding) -> Result<(), AnnError> {
        if !self.trained {
            return Err(AnnError::NotTrained);
        }
        let v = self.prepare(vector)?;
        if self.ids.contains(&id) {
            return Err(AnnError::DuplicateId(id));
        }
        let list = self.nearest_list(&v);
        self.postings[list].push(Posting { id, vector: v });
        self.ids.insert(id);
        Ok(())
    }

    fn score(&self, q: &[f64], v: &[f64]) -> f64 {
        match self.metric {
            Metric::Cosine => dot(q, v).clamp(-1.0, 1.0),
            Metric::L2 => sq_l2(q, v).sqrt(),
        }
    }

    /// Top-`k` hits from the `nprobe` nearest clusters, best first.
    pub fn search(&self, query: &Embedding, params: SearchParams) -> Result<Vec<(u64, f64)>, AnnError> {
        if !self.trained {
            return Err(AnnError::NotTrained);
        }
        if params.k == 0 {
            return Err(AnnError::InvalidParams("k must be >= 1".into()));
        }
        if params.nprobe == 0 || params.nprobe > self.nlist {
            return Err(AnnError::InvalidParams(format!(
                "nprobe {} not in [1, {}]",
                params.nprobe, self.nlist
            )));
        }
        if self.ids.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.prepare(query)?;
        let mut hits: Vec<(u64, f64)> = self
            .ranked_lists(&q)
            .into_iter()
            .take(params.nprobe)
            .flat_map(|c| self.postings[c].iter())
            .map(|p| (p.id, self.score(&q, &p.vector)))
            .collect();
        let metric = self.metric;
        if hits.len() > params.k {
            hits.select_nth_unstable_by(params.k - 1, |a, b| metric.compare_hits(a, b));
            hits.truncate(params.k);
        }
        hits.sort_by(|a, b| metric.compare_hits(a, b));
        Ok(hits)
    }

    /// Writes the little-endian binary snapshot: header, centroid block, then
    /// one block per posting list. Vectors are stored as `f32`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), AnnError> {
        if !self.trained {
            return Err(AnnError::NotTrained);
        }
        w.write_all(MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.nlist as u32).to_le_bytes())?;
        w.write_all(&self.metric.code().to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for c in &self.centroids {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        for list in &self.postings {
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for p in list {
                w.write_all(&p.id.to_le_bytes())?;
                for x in &p.vector {
                    w.write_all(&(*x as f32).to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, AnnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AnnError::Snapshot("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(AnnError::UnsupportedVersion { found: version });
        }
        let dim = read_u32(&mut r)? as usize;
        let nlist = read_u32(&mut r)? as usize;
        let metric = Metric::from_code(read_u32(&mut r)?).ok_or_else(|| AnnError::Snapshot("unknown metric".into()))?;
        let count = read_u64(&mut r)? as usize;
        if dim == 0 || nlist == 0 {
            return Err(AnnError::Snapshot("zero dim or nlist".into()));
        }
        let mut index = IvfIndex::untrained(dim, nlist, metric);
        index.centroids = read_f32s(&mut r, nlist * dim)?;
        for list in 0..nlist {
            let len = read_u32(&mut r)? as usize;
            for _ in 0..len {
                let id = read_u64(&mut r)?;
                let vector = read_f32s(&mut r, dim)?;
                if !index.ids.insert(id) {
                    return Err(AnnError::Snapshot(format!("duplicate id {id}")));
                }
                index.postings[list].push(Posting { id, vector });
            }
        }
        if index.ids.len() != count {
            return Err(AnnError::Snapshot(format!(
                "header says {count} vectors, found {}",
                index.ids.len()
            )));
        }
        index.trained = true;
        Ok(index)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn nearest(v: &[f64], centroids: &[f64], dim: usize, k: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let d = sq_l2(v, &centroids[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. Stops after
/// [`MAX_KMEANS_ITERS`] or when the total squared centroid shift relative to
/// the total squared centroid norm drops below [`KMEANS_TOLERANCE`]. A
/// cluster that ends up empty takes over the point of the largest cluster
/// that lies farthest from its centroid.
fn kmeans(data: &[Vec<f64>], dim: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();

    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first]);
    let mut d2: Vec<f64> = data.iter().map(|p| sq_l2(p, &data[first])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(&data[pick]);
        for (i, p) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_l2(p, &data[pick]));
        }
    }

    for _ in 0..MAX_KMEANS_ITERS {
        let mut assign: Vec<usize> = data.par_iter().map(|p| nearest(p, &centroids, dim, k)).collect();
        repair_empty(data, &centroids, dim, k, &mut assign);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &c) in data.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            let cnt = counts[c] as f64;
            for s in &mut sums[c * dim..(c + 1) * dim] {
                *s /= cnt;
            }
        }
        let shift = sq_l2(&sums, &centroids);
        let scale: f64 = centroids.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        centroids = sums;
        if shift / scale < KMEANS_TOLERANCE {
            break;
        }
    }
    centroids
}

fn repair_empty(data: &[Vec<f64>], centroids: &[f64], dim: usize, k: usize, assign: &mut [usize]) {
    let mut counts = vec![0usize; k];
    for &c in assign.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let largest = (0..k)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        if counts[largest] < 2 {
            break;
        }
        let centre = &centroids[largest * dim..(largest + 1) * dim];
        let far = (0..data.len())
            .filter(|&i| assign[i] == largest)
            .max_by(|&a, &b| {
                sq_l2(&data[a], centre)
                    .total_cmp(&sq_l2(&data[b], centre))
                    .then(b.cmp(&a))
            })
            .unwrap();
        assign[far] = empty;
        counts[largest] -= 1;
        counts[empty] = 1;
    }
}
