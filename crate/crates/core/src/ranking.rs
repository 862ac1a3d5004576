//! Two-stage retrieval: rank candidates by cosine similarity of weighted
//! global embeddings, then re-rank by `initial * confidence`.
//!
//! Candidate scoring is data-parallel. Every score is computed
//! independently and collected in input order, and the single sort at the
//! end uses an id tie-break, so output never depends on the worker count.

use rayon::prelude::*;

use crate::confidence::{weighted_mean, ConfidenceTransform};
use crate::error::{Error, Result};
use crate::types::{dot, norm, rank_order, Embedding, PrototypeSet, RankedList, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankScore {
    pub initial: f64,
    pub confidence: f64,
    pub final_score: f64,
}

/// `h = sum_k w_k * z_k` (no 1/K factor; cosine ignores the scale anyway).
pub fn global_embedding(set: &PrototypeSet, weights: &WeightVector) -> Result<Embedding> {
    weights.check_k(set.k())?;
    Embedding::new(weighted_sum(set, weights.weights()))
}

fn weighted_sum(set: &PrototypeSet, w: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; set.dim()];
    for (z, wk) in set.prototypes().iter().zip(w) {
        for (acc, v) in h.iter_mut().zip(z.as_slice()) {
            *acc += wk * v;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankOptions {
    /// `false` stops after the initial global-similarity ranking.
    pub rerank: bool,
    pub transform: ConfidenceTransform,
    /// Re-rank only the top `M` of the initial ranking; the rest keep their
    /// initial order below the re-ranked block. `None` re-ranks everything.
    pub shortlist: Option<usize>,
}

impl RankOptions {
    pub fn full(transform: ConfidenceTransform) -> Self {
        Self {
            rerank: true,
            transform,
            shortlist: None,
        }
    }
}

/// Output of [`RankingEngine::rank`]: the re-ranked block (descending by
/// final score) followed by any candidates left out of the shortlist, in
/// initial order. Without re-ranking `reranked` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranking {
    pub query_id: String,
    pub reranked: Vec<(String, RerankScore)>,
    pub remainder: Vec<(String, f64)>,
}

impl Reranking {
    /// Candidate ids in final output order.
    pub fn ids(&self) -> Vec<&str> {
        self.reranked
            .iter()
            .map(|(id, _)| id.as_str())
            .chain(self.remainder.iter().map(|(id, _)| id.as_str()))
            .collect()
    }

    /// The re-ranked block as a ranked list of final scores.
    pub fn final_list(&self) -> Result<RankedList> {
        RankedList::from_scores(
            self.query_id.clone(),
            self.reranked
                .iter()
                .map(|(id, s)| (id.clone(), s.final_score))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.reranked.len() + self.remainder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A prototype set with its weighted global embedding and norms cached.
#[derive(Debug, Clone)]
struct Prepared {
    id: String,
    protos: Vec<f64>,
    proto_norms: Vec<f64>,
    global: Vec<f64>,
    global_norm: f64,
}

impl Prepared {
    fn new(set: &PrototypeSet, w: &[f64]) -> Self {
        let protos: Vec<f64> = set
            .prototypes()
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .collect();
        let proto_norms = set.prototypes().iter().map(Embedding::norm).collect();
        let global = weighted_sum(set, w);
        let global_norm = norm(&global);
        Self {
            id: set.item_id().to_owned(),
            protos,
            proto_norms,
            global,
            global_norm,
        }
    }

    fn initial(&self, other: &Prepared) -> Result<f64> {
        if self.global_norm == 0.0 || other.global_norm == 0.0 {
            return Err(Error::ZeroNormVector);
        }
        Ok(
            (dot(&self.global, &other.global) / (self.global_norm * other.global_norm))
                .clamp(-1.0, 1.0),
        )
    }

    fn similarities(&self, other: &Prepared, dim: usize) -> Result<Vec<f64>> {
        self.proto_norms
            .iter()
            .zip(&other.proto_norms)
            .enumerate()
            .map(|(k, (na, nb))| {
                if *na == 0.0 || *nb == 0.0 {
                    return Err(Error::ZeroNormVector);
                }
                let a = &self.protos[k * dim..(k + 1) * dim];
                let b = &other.protos[k * dim..(k + 1) * dim];
                Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
            })
            .collect()
    }
}

/// Candidate pool prepared once for many queries under fixed weights.
#[derive(Debug, Clone)]
pub struct RankingEngine {
    weights: WeightVector,
    k: usize,
    dim: usize,
    candidates: Vec<Prepared>,
}

impl RankingEngine {
    pub fn new<'a, I>(candidates: I, weights: &WeightVector) -> Result<Self>
    where
        I: IntoIterator<Item = &'a PrototypeSet>,
    {
        let sets: Vec<&PrototypeSet> = candidates.into_iter().collect();
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidInput("no candidates to rank".into()))?;
        let (k, dim) = (first.k(), first.dim());
        weights.check_k(k)?;
        for s in &sets {
            check_shape(s, k, dim)?;
        }
        let mut seen = std::collections::HashSet::with_capacity(sets.len());
        if let Some(dup) = sets.iter().find(|s| !seen.insert(s.item_id())) {
            return Err(Error::DuplicateCandidate(dup.item_id().to_owned()));
        }
        let w = weights.weights();
        let candidates = sets.par_iter().map(|s| Prepared::new(s, w)).collect();
        Ok(Self {
            weights: weights.clone(),
            k,
            dim,
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    fn prepare_query(&self, query: &PrototypeSet) -> Result<Prepared> {
        check_shape(query, self.k, self.dim)?;
        Ok(Prepared::new(query, self.weights.weights()))
    }

    /// Global-embedding cosine against every candidate, in candidate order.
    pub fn initial_scores(&self, query: &PrototypeSet) -> Result<Vec<(String, f64)>> {
        let q = self.prepare_query(query)?;
        self.candidates
            .par_iter()
            .map(|c| Ok((c.id.clone(), q.initial(c)?)))
            .collect()
    }

    pub fn initial_rank(&self, query: &PrototypeSet) -> Result<RankedList> {
        RankedList::from_scores(query.item_id(), self.initial_scores(query)?)
    }

    pub fn rank(&self, query: &PrototypeSet, opts: &RankOptions) -> Result<Reranking> {
        let q = self.prepare_query(query)?;
        let initial: Vec<f64> = self
            .candidates
            .par_iter()
            .map(|c| q.initial(c))
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        let by_initial = |a: &usize, b: &usize| {
            rank_order(
                initial[*a],
                &self.candidates[*a].id,
                initial[*b],
                &self.candidates[*b].id,
            )
        };

        if !opts.rerank {
            order.sort_by(by_initial);
            return Ok(Reranking {
                query_id: query.item_id().to_owned(),
                reranked: Vec::new(),
                remainder: order
                    .into_iter()
                    .map(|i| (self.candidates[i].id.clone(), initial[i]))
                    .collect(),
            });
        }

        let head_len = opts.shortlist.map_or(order.len(), |m| m.min(order.len()));
        let rest = if head_len < order.len() {
            order.sort_by(by_initial);
            order.split_off(head_len)
        } else {
            Vec::new()
        };

        let transform = opts.transform;
        let w = self.weights.weights();
        let mut head: Vec<(usize, RerankScore)> = order
            .par_iter()
            .map(|&i| {
                let sims = q.similarities(&self.candidates[i], self.dim)?;
                let confidence = weighted_mean(&sims, w, transform);
                Ok((
                    i,
                    RerankScore {
                        initial: initial[i],
                        confidence,
                        final_score: initial[i] * confidence,
                    },
                ))
            })
            .collect::<Result<_>>()?;

        let flipped = head
            .iter()
            .filter(|(_, s)| s.initial != 0.0 && s.final_score != 0.0)
            .filter(|(_, s)| s.initial.signum() != s.final_score.signum())
            .count();
        if flipped > 0 {
            log::warn!(
                "query {:?}: {flipped} candidate(s) changed sign between initial and final score \
                 (negative confidence under the raw transform)",
                query.item_id()
            );
        }

        head.sort_by(|(a, sa), (b, sb)| {
            rank_order(
                sa.final_score,
                &self.candidates[*a].id,
                sb.final_score,
                &self.candidates[*b].id,
            )
        });

        Ok(Reranking {
            query_id: query.item_id().to_owned(),
            reranked: head
                .into_iter()
                .map(|(i, s)| (self.candidates[i].id.clone(), s))
                .collect(),
            remainder: rest
                .into_iter()
                .map(|i| (self.candidates[i].id.clone(), initial[i]))
                .collect(),
        })
    }

    /// Ranks every query; results come back in query order.
    pub fn rank_all(
        &self,
        queries: &[&PrototypeSet],
        opts: &RankOptions,
    ) -> Result<Vec<Reranking>> {
        queries.par_iter().map(|q| self.rank(q, opts)).collect()
    }
}

fn check_shape(set: &PrototypeSet, k: usize, dim: usize) -> Result<()> {
    if set.k() != k {
        return Err(Error::MismatchedK {
            expected: k,
            found: set.k(),
        });
    }
    if set.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: set.dim(),
            context: Some(format!("{} {:?}", set.modality(), set.item_id())),
        });
    }
    Ok(())
}

/// Initial ranking of `candidates` for one query.
pub fn initial_rank(
    query: &PrototypeSet,
    candidates: &[PrototypeSet],
    weights: &WeightVector,
) -> Result<RankedList> {
    RankingEngine::new(candidates, weights)?.initial_rank(query)
}

/// Full confidence-weighted re-ranking of `candidates` for one query.
pub fn rerank(
    query: &PrototypeSet,
    candidates: &[PrototypeSet],
    weights: &WeightVector,
    transform: ConfidenceTransform,
) -> Result<Reranking> {
    RankingEngine::new(candidates, weights)?.rank(query, &RankOptions::full(transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{cosine, Modality};

    fn set(id: &str, m: Modality, v: &[&[f64]]) -> PrototypeSet {
        PrototypeSet::new(
            id,
            m,
            v.iter()
                .map(|x| Embedding::new(x.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn global_embedding_examples() {
        let u: &[f64] = &[0.5, -1.0];
        let s = set("a", Modality::Image, &[u, u, u]);
        let h = global_embedding(&s, &WeightVector::uniform(3).unwrap()).unwrap();
        assert_eq!(h.as_slice(), &[1.5, -3.0]);

        let s = set("a", Modality::Image, &[&[1.0, 2.0], &[7.0, 7.0]]);
        let w = WeightVector::from_weights(vec![2.0, 0.0]).unwrap();
        assert_eq!(global_embedding(&s, &w).unwrap().as_slice(), &[2.0, 4.0]);

        let s = set("a", Modality::Image, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let h = global_embedding(&s, &WeightVector::uniform(2).unwrap()).unwrap();
        assert_eq!(h.as_slice(), &[1.0, 1.0]);

        assert!(matches!(
            global_embedding(&s, &WeightVector::uniform(3).unwrap()),
            Err(Error::MismatchedK { .. })
        ));
    }

    #[test]
    fn identical_candidate_ranks_first() {
        let q = set("q", Modality::Image, &[&[1.0, 0.2], &[0.3, 1.0]]);
        let cands = vec![
            set("a", Modality::Report, &[&[0.0, 1.0], &[1.0, 0.0]]),
            set("b", Modality::Report, &[&[1.0, 0.2], &[0.3, 1.0]]),
            set("c", Modality::Report, &[&[-1.0, 0.0], &[0.0, -1.0]]),
        ];
        let w = WeightVector::uniform(2).unwrap();
        let list = initial_rank(&q, &cands, &w).unwrap();
        assert_eq!(list.entries()[0].0, "b");
        assert!((list.entries()[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_scores_tie_break_by_id() {
        let q = set("q", Modality::Image, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let p: &[&[f64]] = &[&[0.0, 1.0], &[1.0, 1.0]];
        let cands = vec![
            set("zeta", Modality::Report, p),
            set("alpha", Modality::Report, p),
        ];
        let w = WeightVector::uniform(2).unwrap();
        assert_eq!(
            initial_rank(&q, &cands, &w).unwrap().ids(),
            vec!["alpha", "zeta"]
        );
        let r = rerank(&q, &cands, &w, ConfidenceTransform::Shifted).unwrap();
        assert_eq!(r.ids(), vec!["alpha", "zeta"]);
    }

    #[test]
    fn three_candidates_match_direct_cosines() {
        let q = set(
            "q",
            Modality::Image,
            &[&[1.0, 2.0, 0.0], &[0.5, -1.0, 2.0], &[1.0, 1.0, 1.0]],
        );
        let cands = vec![
            set(
                "a",
                Modality::Report,
                &[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[2.0, 0.0, 1.0]],
            ),
            set(
                "b",
                Modality::Report,
                &[&[1.0, 1.0, 0.0], &[0.0, -1.0, 1.0], &[1.0, 2.0, 1.0]],
            ),
            set(
                "c",
                Modality::Report,
                &[&[-1.0, 0.0, 0.0], &[0.0, 0.0, -1.0], &[0.5, 0.5, 0.0]],
            ),
        ];
        let w = WeightVector::from_theta(vec![0.3, -0.2, 0.1]).unwrap();
        let list = initial_rank(&q, &cands, &w).unwrap();

        let hq = global_embedding(&q, &w).unwrap();
        let mut expected: Vec<(String, f64)> = cands
            .iter()
            .map(|c| {
                let hc = global_embedding(c, &w).unwrap();
                (c.item_id().to_owned(), cosine(&hq, &hc).unwrap())
            })
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(list.entries(), &expected[..]);
    }

    #[test]
    fn constant_confidence_preserves_order() {
        // every candidate shares the same per-prototype geometry relative to q
        // up to a rotation of the global, so use identical regional prototypes
        let q = set("q", Modality::Image, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let cands = vec![
            set("a", Modality::Report, &[&[1.0, 0.0], &[1.0, 0.0]]),
            set("b", Modality::Report, &[&[1.0, 0.0], &[1.0, 0.0]]),
        ];
        let w = WeightVector::uniform(2).unwrap();
        let init = initial_rank(&q, &cands, &w).unwrap();
        let rr = rerank(&q, &cands, &w, ConfidenceTransform::Shifted).unwrap();
        assert_eq!(init.ids(), rr.ids());
    }

    #[test]
    fn zero_initial_gives_zero_final() {
        let q = set("q", Modality::Image, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let cands = vec![set("a", Modality::Report, &[&[0.0, 1.0], &[0.0, 1.0]])];
        let w = WeightVector::uniform(2).unwrap();
        let rr = rerank(&q, &cands, &w, ConfidenceTransform::Shifted).unwrap();
        let s = rr.reranked[0].1;
        assert_eq!(s.initial, 0.0);
        assert_eq!(s.final_score, 0.0);
        assert_eq!(s.confidence, 0.5);
    }

    #[test]
    fn shortlist_limits_reranked_block() {
        let q = set("q", Modality::Image, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let cands: Vec<PrototypeSet> = (0..5)
            .map(|i| {
                let a = i as f64 * 0.3;
                set(&format!("c{i}"), Modality::Report, &[&[1.0, a], &[1.0, a]])
            })
            .collect();
        let w = WeightVector::uniform(2).unwrap();
        let engine = RankingEngine::new(&cands, &w).unwrap();
        let opts = RankOptions {
            rerank: true,
            transform: ConfidenceTransform::Shifted,
            shortlist: Some(2),
        };
        let r = engine.rank(&q, &opts).unwrap();
        assert_eq!(r.reranked.len(), 2);
        assert_eq!(r.remainder.len(), 3);
        assert_eq!(r.ids(), vec!["c0", "c1", "c2", "c3", "c4"]);

        let big = RankOptions {
            shortlist: Some(1_000_000),
            ..opts
        };
        assert_eq!(
            engine.rank(&q, &big).unwrap(),
            engine
                .rank(&q, &RankOptions::full(ConfidenceTransform::Shifted))
                .unwrap()
        );
    }

    #[test]
    fn zero_global_is_an_error() {
        let q = set("q", Modality::Image, &[&[1.0, 0.0], &[-1.0, 0.0]]);
        let cands = vec![set("a", Modality::Report, &[&[1.0, 0.0], &[1.0, 0.0]])];
        let w = WeightVector::uniform(2).unwrap();
        assert!(matches!(
            initial_rank(&q, &cands, &w),
            Err(Error::ZeroNormVector)
        ));
    }

    #[test]
    fn rerank_product_example() {
        // A: initial 0.9, confidence 0.5; B: initial 0.8, confidence 0.8
        let a = RerankScore {
            initial: 0.9,
            confidence: 0.5,
            final_score: 0.9 * 0.5,
        };
        let b = RerankScore {
            initial: 0.8,
            confidence: 0.8,
            final_score: 0.8 * 0.8,
        };
        assert!((a.final_score - 0.45).abs() < 1e-15);
        assert!((b.final_score - 0.64).abs() < 1e-15);
        assert!(b.final_score > a.final_score);
    }
}
