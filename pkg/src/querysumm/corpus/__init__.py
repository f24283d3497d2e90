from .generator import GeneratorConfig, generate_corpus
from .lexicon import N_PHENOTYPES, PHENOTYPE_NAMES, ConceptLexicon, build_lexicon, extract_concepts
from .preprocess import PreprocessRules, expand_abbreviations, preprocess, preprocess_corpus
from .records import (
    SPLITS, Admission, Corpus, NursingNote, PatientRecord, load_corpus, metadata_to_text,
    save_corpus, split_words,
)
from .vocab import BOS, EOS, PAD, SEP, SPECIAL_TOKENS, TI, UNK, Vocabulary, build_vocabulary

__all__ = [
    "Admission", "BOS", "ConceptLexicon", "Corpus", "EOS", "GeneratorConfig", "N_PHENOTYPES",
    "NursingNote", "PAD", "PHENOTYPE_NAMES", "PatientRecord", "PreprocessRules", "SEP", "SPECIAL_TOKENS",
    "SPLITS", "TI", "UNK", "Vocabulary", "build_lexicon", "build_vocabulary", "expand_abbreviations",
    "extract_concepts", "generate_corpus", "load_corpus", "metadata_to_text", "preprocess",
    "preprocess_corpus", "save_corpus", "split_words",
]
