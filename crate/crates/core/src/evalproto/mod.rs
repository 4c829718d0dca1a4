//! Gallery/probe evaluation: rank-1, cross-view matrices and gallery-size sweeps.

mod embeddings;
mod metrics;

pub use embeddings::{
    load_embeddings, read_embeddings, save_embeddings, write_embeddings, EmbeddingSet, EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
};
pub use metrics::{
    cross_view_eval, gallery_size_sweep, matrix_text, nearest, rank1, report_csv, report_text, summarize,
    ConditionReport, CrossViewReport,
};
