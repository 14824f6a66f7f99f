//! Zero-shot classification, kernel ridge baselines, taxonomy rank
//! correlation, verb/noun arithmetic and report emission.

mod arithmetic;
mod krr;
mod report;
mod similarity;
mod zsl;

pub use arithmetic::{class_means, enumerate_arithmetic_cases, run_arithmetic_tests, ArithmeticCase, ArithmeticOutcome};
pub use krr::{gram, krr_fit_predict, Kernel, KrrModel};
pub use report::{
    embeddings_tsv, write_report, ArithmeticSummary, EvalReport, RankCorrelation, RunMeta, SplitResult,
};
pub use similarity::{
    average_ranks, build_similarity_matrix, matrix_rank_correlation, names_in_taxonomy, spearman_rho, wu_palmer,
    SimilarityMatrix, SimilaritySource,
};
pub use zsl::{accuracy, check_split, zsl_accuracy, zsl_classify, zsl_evaluate, zsl_from_embeddings, ZslOutcome};
