from .checkpoint import load_model, read_checkpoint, save_checkpoint, save_model
from .seq2seq import (
    CONTENT_EXCLUDED, EncodedNote, Generation, ModelConfig, Seq2SeqModel, content_length, tif_weights,
)

__all__ = [
    "CONTENT_EXCLUDED", "EncodedNote", "Generation", "ModelConfig", "Seq2SeqModel", "content_length",
    "load_model", "read_checkpoint", "save_checkpoint", "save_model", "tif_weights",
]
