"""attribkit: train a small CNN text classifier, attribute its predictions,
and stress-test the attributions with feature-removal experiments."""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    CorpusError,
    LabeledDocument,
    Vocabulary,
    build_vocabulary,
    encode,
    load_corpus,
    load_corpus_dir,
    remap_labels_yelp,
    save_corpus,
    tokenize,
)
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    forward,
    gradients,
    init_params,
    load_params,
    predict,
    save_params,
    train,
)
from .attribution import (
    AttributionDiff,
    AttributionTensor,
    attribute,
    attribution_difference,
    conservation_report,
    lrp,
    lrp_linear,
    saliency,
    word_highlights,
)

__all__ = [
    "Corpus", "CorpusError", "LabeledDocument", "Vocabulary",
    "build_vocabulary", "encode", "load_corpus", "load_corpus_dir",
    "remap_labels_yelp", "save_corpus", "tokenize",
    "ForwardTrace", "ModelConfig", "ModelParams", "forward", "gradients",
    "init_params", "load_params", "predict", "save_params", "train",
    "AttributionDiff", "AttributionTensor", "attribute",
    "attribution_difference", "conservation_report", "lrp", "lrp_linear",
    "saliency", "word_highlights",
]
