//! Append-only embedding store with exact cosine top-k search.
//!
//! Vectors are L2-normalized at ingestion, so cosine similarity is a plain
//! inner product. Records are partitioned by scene; every search runs over a
//! single scene partition. Indices handed out by [`Store::add_record`] are
//! stable for the lifetime of the store.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{desc, dot, normalized, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("frame {0} has a zero or non-finite vector")]
    ZeroVector(u64),
    #[error("duplicate frame id {0}")]
    DuplicateFrame(u64),
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("scene {0:?} has no records")]
    EmptyPartition(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("store dimension must be positive")]
    ZeroDimension,
}

/// A record as supplied by a producer. The vector need not be normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord<T> {
    pub frame_id: u64,
    pub vector: Vec<T>,
    pub scene_id: String,
    /// Ground-truth position in meters. Evaluation metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_scores: Option<BTreeMap<String, f64>>,
}

impl<T> EmbeddingRecord<T> {
    pub fn new(frame_id: u64, scene_id: impl Into<String>, vector: Vec<T>) -> Self {
        Self {
            frame_id,
            vector,
            scene_id: scene_id.into(),
            pose: None,
            category_scores: None,
        }
    }

    pub fn with_pose(mut self, pose: [f64; 2]) -> Self {
        self.pose = Some(pose);
        self
    }

    pub fn with_category_scores(mut self, scores: BTreeMap<String, f64>) -> Self {
        self.category_scores = Some(scores);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub frame_id: u64,
    pub scene_id: String,
    pose: Option<[f64; 2]>,
    pub category_scores: Option<BTreeMap<String, f64>>,
}

impl RecordMeta {
    /// Ground-truth pose. Only evaluation code (pose graph, coverage checks)
    /// may call this; retrieval never does.
    pub fn eval_pose(&self) -> Option<[f64; 2]> {
        self.pose
    }
}

/// Append-only collection of unit-norm vectors.
#[derive(Debug, Clone)]
pub struct Store<T> {
    dim: usize,
    data: Vec<T>,
    meta: Vec<RecordMeta>,
    by_frame: HashMap<u64, usize>,
    scenes: BTreeMap<String, Vec<usize>>,
}

impl<T: Scalar> Store<T> {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        Ok(Self {
            dim,
            data: Vec::new(),
            meta: Vec::new(),
            by_frame: HashMap::new(),
            scenes: BTreeMap::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    fn check(&self, raw: &EmbeddingRecord<T>) -> Result<Vec<T>, StoreError> {
        if raw.vector.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                got: raw.vector.len(),
            });
        }
        if self.by_frame.contains_key(&raw.frame_id) {
            return Err(StoreError::DuplicateFrame(raw.frame_id));
        }
        normalized(&raw.vector).ok_or(StoreError::ZeroVector(raw.frame_id))
    }

    fn push(&mut self, raw: EmbeddingRecord<T>, unit: Vec<T>) -> usize {
        let idx = self.meta.len();
        self.data.extend_from_slice(&unit);
        self.by_frame.insert(raw.frame_id, idx);
        self.scenes.entry(raw.scene_id.clone()).or_default().push(idx);
        self.meta.push(RecordMeta {
            frame_id: raw.frame_id,
            scene_id: raw.scene_id,
            pose: raw.pose,
            category_scores: raw.category_scores,
        });
        idx
    }

    /// Normalize and append one record, returning its permanent index.
    pub fn add_record(&mut self, raw: EmbeddingRecord<T>) -> Result<usize, StoreError> {
        let unit = self.check(&raw)?;
        Ok(self.push(raw, unit))
    }

    fn check_batch(&self, batch: &[EmbeddingRecord<T>]) -> Result<Vec<Vec<T>>, StoreError> {
        let mut seen = HashSet::with_capacity(batch.len());
        let mut units = Vec::with_capacity(batch.len());
        for raw in batch {
            if !seen.insert(raw.frame_id) {
                return Err(StoreError::DuplicateFrame(raw.frame_id));
            }
            units.push(self.check(raw)?);
        }
        Ok(units)
    }

    /// Check that [`Store::add_batch`] would accept `batch`, without storing it.
    pub fn validate_batch(&self, batch: &[EmbeddingRecord<T>]) -> Result<(), StoreError> {
        self.check_batch(batch).map(|_| ())
    }

    /// Append a batch atomically: either every record is stored or none is.
    /// Returns the index range occupied by the batch.
    pub fn add_batch(&mut self, batch: Vec<EmbeddingRecord<T>>) -> Result<std::ops::Range<usize>, StoreError> {
        let units = self.check_batch(&batch)?;
        let start = self.len();
        for (raw, unit) in batch.into_iter().zip(units) {
            self.push(raw, unit);
        }
        Ok(start..self.len())
    }

    /// Unit-norm vector of record `idx`.
    pub fn vector(&self, idx: usize) -> &[T] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn meta(&self, idx: usize) -> &RecordMeta {
        &self.meta[idx]
    }

    pub fn frame_id(&self, idx: usize) -> u64 {
        self.meta[idx].frame_id
    }

    pub fn index_of(&self, frame_id: u64) -> Option<usize> {
        self.by_frame.get(&frame_id).copied()
    }

    pub fn scene_ids(&self) -> impl Iterator<Item = &str> {
        self.scenes.keys().map(String::as_str)
    }

    /// Record indices of a scene in insertion order.
    pub fn partition(&self, scene: &str) -> Result<&[usize], StoreError> {
        let part = self
            .scenes
            .get(scene)
            .ok_or_else(|| StoreError::UnknownScene(scene.to_string()))?;
        if part.is_empty() {
            return Err(StoreError::EmptyPartition(scene.to_string()));
        }
        Ok(part)
    }

    pub fn scene_counts(&self) -> BTreeMap<String, usize> {
        self.scenes.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    /// Cosine similarity between two stored records.
    pub fn similarity(&self, a: usize, b: usize) -> T {
        dot(self.vector(a), self.vector(b))
    }

    /// Exact top-k over a scene partition, sorted by score descending with
    /// ties broken by ascending frame id.
    pub fn topk(&self, scene: &str, query: &[T], k: usize) -> Result<Vec<(usize, T)>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let part = self.partition(scene)?;
        // Bounded heap whose top is the worst kept entry, so most records
        // are rejected after one comparison.
        let mut heap: BinaryHeap<Ranked<T>> = BinaryHeap::with_capacity(k.min(part.len()) + 1);
        for &i in part {
            let score = dot(self.vector(i), query);
            if heap.len() < k {
                heap.push(Ranked::new(score, self.meta[i].frame_id, i));
                continue;
            }
            let mut worst = heap.peek_mut().expect("k > 0");
            let better = match desc(score, worst.score) {
                Ordering::Less => true,
                Ordering::Equal => self.meta[i].frame_id < worst.frame_id,
                Ordering::Greater => false,
            };
            if better {
                *worst = Ranked::new(score, self.meta[i].frame_id, i);
            }
        }
        Ok(heap.into_sorted_vec().into_iter().map(|r| (r.index, r.score)).collect())
    }
}

/// Top-k candidate ordered best first: higher score, then lower frame id.
struct Ranked<T> {
    score: T,
    frame_id: u64,
    index: usize,
}

impl<T> Ranked<T> {
    fn new(score: T, frame_id: u64, index: usize) -> Self {
        Self { score, frame_id, index }
    }
}

impl<T: Scalar> Ord for Ranked<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        desc(self.score, other.score).then_with(|| self.frame_id.cmp(&other.frame_id))
    }
}

impl<T: Scalar> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> PartialEq for Ranked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Ranked<T> {}

/// Cosine of two unit vectors, clamped to [-1, 1].
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T, StoreError> {
    if a.len() != b.len() {
        return Err(StoreError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let one = T::one();
    Ok(dot(a, b).max(-one).min(one))
}

/// A store shared between concurrent appenders and readers.
///
/// Appends take the single writer lock for the whole batch, so readers see
/// either all of a batch or none of it.
#[derive(Debug, Clone)]
pub struct SharedStore<T> {
    inner: Arc<RwLock<Store<T>>>,
}

impl<T: Scalar> SharedStore<T> {
    pub fn new(store: Store<T>) -> Self {
        Self {
            inner: Arc::new(RwLock::new(store)),
        }
    }

    pub fn append_batch(&self, batch: Vec<EmbeddingRecord<T>>) -> Result<std::ops::Range<usize>, StoreError> {
        self.inner.write().add_batch(batch)
    }

    /// Run `f` while holding a read snapshot. Appends block until it returns.
    pub fn read<R>(&self, f: impl FnOnce(&Store<T>) -> R) -> R {
        f(&self.inner.read())
    }

    /// Run `f` under the writer lock; `f` sees the store before and may
    /// append to it. Used when an append must be paired with a side effect
    /// (e.g. a durable log write) atomically.
    pub fn write<R>(&self, f: impl FnOnce(&mut Store<T>) -> R) -> R {
        f(&mut self.inner.write())
    }

    pub fn len(&self) -> usize {
        self.inner.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
