from .loop import (
    Guidance, NoteItem, TrainConfig, TrainLog, bootstrap_accuracy, build_items, greedy_summaries, lead_ids,
    length_penalty, reconstruction_stats, soft_lengths, stage0_bootstrap, stage1_adapt, stage1_names, stage2_batch_loss,
    stage2_train, summ_loss, summary_segments, usable_items, validation_ce,
)
from .verify import micro_setup, stage2_grad_check

__all__ = [
    "Guidance", "NoteItem", "TrainConfig", "TrainLog", "bootstrap_accuracy", "build_items", "greedy_summaries",
    "lead_ids", "length_penalty", "micro_setup", "reconstruction_stats", "soft_lengths", "stage0_bootstrap",
    "stage1_adapt", "stage1_names", "stage2_batch_loss", "stage2_grad_check", "stage2_train", "summ_loss", "summary_segments",
    "usable_items", "validation_ce",
]
