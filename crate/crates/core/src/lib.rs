//! Prototype-based cross-modal retrieval with confidence-weighted re-ranking.
//!
//! Images and reports are each summarized by `K` prototype embeddings (the
//! last one global). A learned weight vector mixes them into one global
//! embedding per item for an initial cosine ranking, and per-prototype
//! agreement between query and candidate yields a confidence that re-ranks
//! the list.

pub mod cli;
pub mod confidence;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod prototype;
pub mod ranking;
pub mod types;

pub use confidence::{
    confidence, pair_confidence, similarity_vector, ConfidenceTransform, SimilarityVector,
};
pub use error::{Error, Result};
pub use eval::{
    aggregate, evaluate_rankings, precision_at_k, recall_at_k, Aggregation, Metric, MetricRow,
    QueryMetric, RelevanceMap,
};
pub use losses::{DiversityMode, LossBreakdown, LossConfig};
pub use prototype::{build_image_prototypes, build_report_prototypes, PatchGrid, SentenceSet};
pub use ranking::{
    global_embedding, initial_rank, rerank, RankOptions, RankingEngine, RerankScore, Reranking,
};
pub use types::{cosine, Corpus, Embedding, Modality, PrototypeSet, RankedList, WeightVector};

/// Worker pool sized from `PECM_THREADS` (unset, empty or `0` means one
/// worker per available core).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("PECM_THREADS") {
        Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidInput(format!(
                "PECM_THREADS must be a non-negative integer, got {v:?}"
            ))
        })?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}
