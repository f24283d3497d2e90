from .baselines import (
    bag_of_words_embedder, encoder_embedder, lead_k, pagerank, similarity_graph, split_sentences, textrank,
    transition_matrix,
)
from .manual import METRICS, ManualScoreSheet, binomial_two_tailed, manual_agg
from .metrics import concept_fdr, concept_recall, document_metrics, length_ratio
from .predictiveness import (
    PredictivenessConfig, chance_macro_f1, fold_assignment, phenotype_macro_f1, predictiveness, readmission_scores,
)
from .report import (
    build_report, read_json, read_summaries, render_table, summary_metrics, write_json, write_per_doc_csv,
    write_summaries,
)

__all__ = [
    "METRICS", "ManualScoreSheet", "PredictivenessConfig", "bag_of_words_embedder", "binomial_two_tailed",
    "build_report", "chance_macro_f1", "concept_fdr", "concept_recall", "document_metrics", "encoder_embedder",
    "fold_assignment", "lead_k", "length_ratio", "manual_agg", "pagerank", "phenotype_macro_f1", "predictiveness",
    "read_json", "read_summaries", "readmission_scores", "render_table", "similarity_graph", "split_sentences",
    "summary_metrics", "textrank", "transition_matrix", "write_json", "write_per_doc_csv", "write_summaries",
]
