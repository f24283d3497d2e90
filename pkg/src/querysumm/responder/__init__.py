from .responder import KINDS, QueryResponder, QuerySpec, ResponderConfig, combine_re_ph
from .train import (
    ResponderTrainConfig, build_examples, class_census, fit, fit_kind, load_responder, make_nextnote_pairs, predict,
    resample_binary, save_responder, targets_for, train_responder, unfrozen_copy,
)

__all__ = [
    "KINDS", "QueryResponder", "QuerySpec", "ResponderConfig", "ResponderTrainConfig", "build_examples",
    "class_census", "combine_re_ph", "fit", "fit_kind", "load_responder", "make_nextnote_pairs", "predict",
    "resample_binary", "save_responder", "targets_for", "train_responder", "unfrozen_copy",
]
