//! Ranking on top of the store: shortlists with MMR diversification, goal
//! retrieval, and category retrieval over softmax-normalized scores.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::embedstore::{Store, StoreError};
use crate::scalar::{desc, Scalar};

/// Shortlist length used for static contexts.
pub const DEFAULT_SHORTLIST: usize = 100;
/// Relevance/diversity mixture for MMR.
pub const DEFAULT_BETA: f64 = 0.5;
/// Number of images returned by category retrieval.
pub const DEFAULT_CATEGORY_K: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("empty shortlist")]
    EmptyShortlist,
    #[error("shortlist size must be at least 1")]
    ZeroShortlist,
    #[error("beta {0} outside [0, 1]")]
    BadBeta(f64),
    #[error("malformed shortlist: {0}")]
    Malformed(&'static str),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("record {record} lacks a score for category {category:?}")]
    MissingCategory { record: usize, category: String },
    #[error("non-finite category score for record {0}")]
    NonFinite(usize),
    #[error("category table has no categories")]
    NoCategories,
    #[error("category table is not normalized")]
    NotNormalized,
}

/// Ranked candidates with their pairwise similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Shortlist<T> {
    /// `(record index, relevance)`, relevance descending.
    pub entries: Vec<(usize, T)>,
    /// Frame id per entry; MMR ties resolve on it.
    pub frame_ids: Vec<u64>,
    /// Row-major `len × len` member-to-member similarity.
    pub pairwise: Vec<T>,
}

impl<T: Scalar> Shortlist<T> {
    /// Build from explicit parts, checking shape and symmetry.
    pub fn new(entries: Vec<(usize, T)>, frame_ids: Vec<u64>, pairwise: Vec<T>) -> Result<Self, RetrievalError> {
        let n = entries.len();
        if frame_ids.len() != n || pairwise.len() != n * n {
            return Err(RetrievalError::Malformed("shape"));
        }
        let tol = T::of(1e-6);
        for i in 0..n {
            if (pairwise[i * n + i] - T::one()).abs() > tol {
                return Err(RetrievalError::Malformed("diagonal"));
            }
            for j in 0..i {
                if (pairwise[i * n + j] - pairwise[j * n + i]).abs() > tol {
                    return Err(RetrievalError::Malformed("asymmetric"));
                }
            }
        }
        Ok(Self {
            entries,
            frame_ids,
            pairwise,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn omega(&self, a: usize, b: usize) -> T {
        self.pairwise[a * self.len() + b]
    }
}

/// Top-`size` neighbours of `query` plus their pairwise similarities.
pub fn build_shortlist<T: Scalar>(
    store: &Store<T>,
    scene: &str,
    query: &[T],
    size: usize,
) -> Result<Shortlist<T>, RetrievalError> {
    if size == 0 {
        return Err(RetrievalError::ZeroShortlist);
    }
    let entries = store.topk(scene, query, size)?;
    let n = entries.len();
    let mut pairwise = vec![T::one(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = store.similarity(entries[i].0, entries[j].0);
            pairwise[i * n + j] = s;
            pairwise[j * n + i] = s;
        }
    }
    let frame_ids = entries.iter().map(|&(i, _)| store.frame_id(i)).collect();
    Ok(Shortlist {
        entries,
        frame_ids,
        pairwise,
    })
}

/// MMR score of candidate `c` given the current maximum similarity to the
/// already-selected set.
#[inline]
pub fn mmr_score<T: Scalar>(beta: T, relevance: T, max_sim: T) -> T {
    beta * relevance - (T::one() - beta) * max_sim
}

/// Greedy maximal-marginal-relevance selection.
///
/// The first pick is the relevance argmax; each later pick maximizes
/// `β·ω(r) − (1−β)·max_{s∈S} Ω(r, s)`. Equal scores go to the smaller frame
/// id. Returns record indices in selection order.
pub fn mmr_rerank<T: Scalar>(shortlist: &Shortlist<T>, n: usize, beta: T) -> Result<Vec<usize>, RetrievalError> {
    mmr_positions(shortlist, n, beta).map(|p| p.into_iter().map(|i| shortlist.entries[i].0).collect())
}

/// As [`mmr_rerank`] but returns positions within the shortlist.
pub fn mmr_positions<T: Scalar>(shortlist: &Shortlist<T>, n: usize, beta: T) -> Result<Vec<usize>, RetrievalError> {
    if shortlist.is_empty() {
        return Err(RetrievalError::EmptyShortlist);
    }
    if !(beta >= T::zero() && beta <= T::one()) {
        return Err(RetrievalError::BadBeta(beta.as_f64()));
    }
    let len = shortlist.len();
    let take = n.min(len);
    let mut chosen = Vec::with_capacity(take);
    let mut used = vec![false; len];
    // max similarity of each candidate to the selected set
    let mut max_sim = vec![T::neg_infinity(); len];

    for step in 0..take {
        let mut best: Option<(usize, T)> = None;
        for c in (0..len).filter(|&c| !used[c]) {
            let score = if step == 0 {
                shortlist.entries[c].1
            } else {
                mmr_score(beta, shortlist.entries[c].1, max_sim[c])
            };
            let better = match best {
                None => true,
                Some((b, bs)) => score > bs || (score == bs && shortlist.frame_ids[c] < shortlist.frame_ids[b]),
            };
            if better {
                best = Some((c, score));
            }
        }
        let (pick, _) = best.expect("candidates remain");
        used[pick] = true;
        chosen.push(pick);
        for (c, m) in max_sim.iter_mut().enumerate() {
            let s = shortlist.omega(c, pick);
            if s > *m {
                *m = s;
            }
        }
    }
    Ok(chosen)
}

/// Nearest database record to a goal embedding.
pub fn retrieve_goal<T: Scalar>(store: &Store<T>, scene: &str, goal: &[T]) -> Result<usize, RetrievalError> {
    Ok(store.topk(scene, goal, 1)?[0].0)
}

/// One image's category scores, aligned with [`CategoryTable::categories`].
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow<T> {
    pub record: usize,
    pub raw: Vec<T>,
    pub normalized: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable<T> {
    pub categories: Vec<String>,
    pub rows: Vec<CategoryRow<T>>,
}

impl<T: Scalar> CategoryTable<T> {
    pub fn new(categories: Vec<String>, rows: Vec<CategoryRow<T>>) -> Result<Self, RetrievalError> {
        if categories.is_empty() {
            return Err(RetrievalError::NoCategories);
        }
        if rows.iter().any(|r| r.raw.len() != categories.len()) {
            return Err(RetrievalError::Malformed("row width"));
        }
        Ok(Self { categories, rows })
    }

    /// Collect raw scores for a scene from record metadata.
    pub fn from_store(store: &Store<T>, scene: &str, categories: &[String]) -> Result<Self, RetrievalError> {
        let mut rows = Vec::new();
        for &idx in store.partition(scene)? {
            let scores: Option<&BTreeMap<String, f64>> = store.meta(idx).category_scores.as_ref();
            let raw = categories
                .iter()
                .map(|c| {
                    scores
                        .and_then(|m| m.get(c))
                        .map(|&v| T::of(v))
                        .ok_or_else(|| RetrievalError::MissingCategory {
                            record: idx,
                            category: c.clone(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(CategoryRow {
                record: idx,
                raw,
                normalized: None,
            });
        }
        Self::new(categories.to_vec(), rows)
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }
}

/// Per-image softmax over categories: `ω_o = exp(s_o) / Σ_o' exp(s_o')`.
pub fn softmax_normalize<T: Scalar>(mut table: CategoryTable<T>) -> Result<CategoryTable<T>, RetrievalError> {
    if table.categories.is_empty() {
        return Err(RetrievalError::NoCategories);
    }
    for row in &mut table.rows {
        if row.raw.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(row.record));
        }
        row.normalized = Some(softmax(&row.raw));
    }
    Ok(table)
}

/// Numerically stable softmax (max-shifted).
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Rank a scene's images by normalized score for one category.
pub fn retrieve_category<T: Scalar>(
    store: &Store<T>,
    scene: &str,
    table: &CategoryTable<T>,
    category: &str,
    k: usize,
) -> Result<Vec<usize>, RetrievalError> {
    let col = table
        .category_index(category)
        .ok_or_else(|| RetrievalError::UnknownCategory(category.to_string()))?;
    let part = store.partition(scene)?;
    let by_record: std::collections::HashMap<usize, &CategoryRow<T>> =
        table.rows.iter().map(|r| (r.record, r)).collect();
    let mut scored = Vec::with_capacity(part.len());
    for &idx in part {
        let row = by_record.get(&idx).ok_or_else(|| RetrievalError::MissingCategory {
            record: idx,
            category: category.to_string(),
        })?;
        let w = row.normalized.as_ref().ok_or(RetrievalError::NotNormalized)?[col];
        scored.push((idx, w));
    }
    scored.sort_by(|a, b| desc(a.1, b.1).then_with(|| store.frame_id(a.0).cmp(&store.frame_id(b.0))));
    Ok(scored.into_iter().take(k).map(|(i, _)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::EmbeddingRecord;

    fn hand_shortlist(rel: &[f64], omega: &[[f64; 4]; 4]) -> Shortlist<f64> {
        Shortlist::new(
            rel.iter().enumerate().map(|(i, &w)| (i, w)).collect(),
            (0..rel.len() as u64).collect(),
            omega.iter().flatten().copied().collect(),
        )
        .unwrap()
    }

    #[test]
    fn mmr_defers_near_duplicate() {
        // 0 and 1 are near-duplicates at the top.
        let omega = [
            [1.0, 0.98, 0.2, 0.1],
            [0.98, 1.0, 0.25, 0.1],
            [0.2, 0.25, 1.0, 0.3],
            [0.1, 0.1, 0.3, 1.0],
        ];
        let s = hand_shortlist(&[0.9, 0.89, 0.7, 0.5], &omega);
        let order = mmr_rerank(&s, 4, 0.5).unwrap();
        // step 2: 1 → .445-.49=-.045, 2 → .35-.1=.25, 3 → .25-.05=.2
        // step 3: 1 → .445-.49, 3 → .25-.15=.1
        assert_eq!(order, vec![0, 2, 3, 1]);
        assert_eq!(mmr_rerank(&s, 4, 1.0).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(mmr_rerank(&s, 2, 0.5).unwrap().len(), 2);
    }

    #[test]
    fn mmr_errors() {
        let empty = Shortlist::<f64>::new(vec![], vec![], vec![]).unwrap();
        assert_eq!(mmr_rerank(&empty, 3, 0.5), Err(RetrievalError::EmptyShortlist));
        let one = Shortlist::new(vec![(4, 0.3)], vec![9], vec![1.0]).unwrap();
        assert_eq!(mmr_rerank(&one, 3, 0.5).unwrap(), vec![4]);
        assert!(matches!(mmr_rerank(&one, 3, 1.5), Err(RetrievalError::BadBeta(_))));
        assert!(Shortlist::new(vec![(0, 1.0), (1, 0.5)], vec![0, 1], vec![1.0, 0.2, 0.3, 1.0]).is_err());
    }

    #[test]
    fn shortlist_size_one() {
        let mut st = Store::<f64>::new(2).unwrap();
        st.add_record(EmbeddingRecord::new(1, "s", vec![1.0, 0.0])).unwrap();
        st.add_record(EmbeddingRecord::new(2, "s", vec![0.0, 1.0])).unwrap();
        let sl = build_shortlist(&st, "s", &[1.0, 0.0], 1).unwrap();
        assert_eq!(sl.entries.len(), 1);
        assert_eq!(sl.pairwise, vec![1.0]);
        assert_eq!(
            build_shortlist(&st, "s", &[1.0, 0.0], 0),
            Err(RetrievalError::ZeroShortlist)
        );
    }

    #[test]
    fn goal_ties_prefer_lower_frame() {
        let mut st = Store::<f64>::new(2).unwrap();
        st.add_record(EmbeddingRecord::new(20, "s", vec![1.0, 1.0])).unwrap();
        st.add_record(EmbeddingRecord::new(10, "s", vec![1.0, -1.0])).unwrap();
        let g = retrieve_goal(&st, "s", &[1.0, 0.0]).unwrap();
        assert_eq!(st.frame_id(g), 10);
    }

    #[test]
    fn softmax_two_categories() {
        let t = CategoryTable::new(
            vec!["a".into(), "b".into()],
            vec![CategoryRow {
                record: 0,
                raw: vec![0.3f64, 0.1],
                normalized: None,
            }],
        )
        .unwrap();
        let w = softmax_normalize(t).unwrap().rows[0].normalized.clone().unwrap();
        // 1 / (1 + e^-0.2) evaluated in extended precision
        assert!((w[0] - 0.549_833_997_312_478).abs() < 1e-6);
        assert!((w[1] - 0.450_166_002_687_522).abs() < 1e-6);
    }

    #[test]
    fn softmax_equal_and_shifted() {
        assert_eq!(softmax(&[2.0f64; 4]), vec![0.25; 4]);
        let a = softmax(&[0.3f64, 0.1]);
        let b = softmax(&[5.3f64, 5.1]);
        assert!((a[0] - b[0]).abs() < 1e-15);
        let bad = CategoryTable::new(
            vec!["a".into()],
            vec![CategoryRow {
                record: 3,
                raw: vec![f64::NAN],
                normalized: None,
            }],
        )
        .unwrap();
        assert_eq!(softmax_normalize(bad), Err(RetrievalError::NonFinite(3)));
        assert_eq!(
            CategoryTable::<f64>::new(vec![], vec![]),
            Err(RetrievalError::NoCategories)
        );
    }

    #[test]
    fn category_single_image_and_unknown() {
        let mut st = Store::<f64>::new(2).unwrap();
        let scores: BTreeMap<String, f64> = [("chair".to_string(), -3.0), ("bed".to_string(), 2.0)].into();
        st.add_record(EmbeddingRecord::new(1, "s", vec![1.0, 0.0]).with_category_scores(scores))
            .unwrap();
        let cats = vec!["chair".to_string(), "bed".to_string()];
        let t = softmax_normalize(CategoryTable::from_store(&st, "s", &cats).unwrap()).unwrap();
        assert_eq!(retrieve_category(&st, "s", &t, "chair", 9).unwrap(), vec![0]);
        assert!(matches!(
            retrieve_category(&st, "s", &t, "sofa", 9),
            Err(RetrievalError::UnknownCategory(_))
        ));
        let raw = CategoryTable::from_store(&st, "s", &cats).unwrap();
        assert_eq!(
            retrieve_category(&st, "s", &raw, "bed", 1),
            Err(RetrievalError::NotNormalized)
        );
    }
}
