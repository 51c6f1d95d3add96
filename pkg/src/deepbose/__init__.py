"""Deep Bag-of-Sub-Emotions: a differentiable emotion-lexicon bag of
features with an end-to-end trainable classifier."""
from .clustering import (
    ApConfig,
    ApResult,
    Codebook,
    DmaeConfig,
    DmaeTrainLog,
    affinity_propagation,
    build_codebook,
    cosine_dissimilarity,
    dmae_reconstruct,
    init_block_from_ap,
    pairwise_dissimilarity,
    train_dmae_block,
)
from .engine import (
    Gradients,
    TrainConfig,
    TrainHistory,
    backward,
    class_weights,
    dense_init,
    train_supervised,
    weighted_bce,
)
from .estimators import (
    DMAE,
    BoSEClassifier,
    BoSEVectorizer,
    DeepBoSEClassifier,
    SubEmotionCodebook,
)
from .interpret import EmotionHistogram, SaliencyMap, emotion_histogram, saliency
from .metrics import MetricReport, metrics
from .model import (
    DenseLayer,
    DenseStack,
    ForwardCache,
    ModelParams,
    dense_forward,
    dm_encode,
    forward,
    idf_attention,
    pool_average,
    pool_sum,
    relou,
)
from .optim import AdamState, adam_step
from .text import (
    Corpus,
    Document,
    EmbeddedDoc,
    EmbeddingTable,
    Lexicon,
    embed_document,
    generate_synthetic_corpus,
    load_corpus,
    load_embeddings,
    load_lexicon,
    tokenize,
)

__all__ = [
    "adam_step",
    "AdamState",
    "affinity_propagation",
    "ApConfig",
    "ApResult",
    "backward",
    "BoSEClassifier",
    "BoSEVectorizer",
    "build_codebook",
    "class_weights",
    "Codebook",
    "Corpus",
    "cosine_dissimilarity",
    "DeepBoSEClassifier",
    "dense_forward",
    "dense_init",
    "DenseLayer",
    "DenseStack",
    "dm_encode",
    "DMAE",
    "dmae_reconstruct",
    "DmaeConfig",
    "DmaeTrainLog",
    "Document",
    "embed_document",
    "EmbeddedDoc",
    "EmbeddingTable",
    "emotion_histogram",
    "EmotionHistogram",
    "forward",
    "ForwardCache",
    "generate_synthetic_corpus",
    "Gradients",
    "idf_attention",
    "init_block_from_ap",
    "Lexicon",
    "load_corpus",
    "load_embeddings",
    "load_lexicon",
    "MetricReport",
    "metrics",
    "ModelParams",
    "pairwise_dissimilarity",
    "pool_average",
    "pool_sum",
    "relou",
    "saliency",
    "SaliencyMap",
    "SubEmotionCodebook",
    "tokenize",
    "train_dmae_block",
    "train_supervised",
    "TrainConfig",
    "TrainHistory",
    "weighted_bce",
]

__version__ = "0.1.0"
