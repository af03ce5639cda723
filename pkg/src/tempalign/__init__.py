"""Cross-lingual retrieval alignment toolkit for temporal question answering.

Builds scored cross-lingual query pairs from in-language similarity, trains a
linear alignment head with a pairwise cosine-ranking loss, selects in-context
examples for low-resource temporal queries, prompts a completion endpoint
(live or recorded), and scores the results.
"""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    CorpusSplit,
    MonthYear,
    QueryRecord,
    corpus_stats,
    l1_offset,
    parse_corpus,
    serialize_corpus,
    synth_l1_corpus,
)
from .embedstore import (  # noqa: F401
    EmbeddingStore,
    cosine,
    cosine_distance,
    load_store,
    save_store,
    top_k,
)
from .pairgen import (  # noqa: F401
    ScoredPair,
    TrainingSet,
    build_pairs,
    score_in_language,
    split_train_val,
)
from .aligner import (  # noqa: F401
    AlignmentHead,
    TrainConfig,
    TrainReport,
    cosent_gradient,
    cosent_loss,
    load_head,
    predict_similarity,
    save_head,
    train,
)
from .retriever import ContextSet, select_examples, strategy_report  # noqa: F401
from .promptkit import AssembledPrompt, PromptTemplate, assemble_prompt, normalize_answer  # noqa: F401
from .llmgate import (  # noqa: F401
    CompletionRequest,
    LiveBackend,
    ReplayBackend,
    ReplayCassette,
    complete,
    complete_many,
    record_run,
)
from .evalkit import (  # noqa: F401
    Histogram,
    UTestResult,
    bleu3,
    embedding_shift_histograms,
    f1_em,
    kl_divergence,
    mann_whitney_one_tailed,
    prioritization_factor,
    translation_success_rate,
)
