"""Black-box analysis and filtering of damaging passages in retrieve-then-read QA."""

from .datamodel import (
    EMPattern,
    PaddingPolicy,
    Passage,
    PassageType,
    PassageTypeLabel,
    ProbeSpec,
    QAInstance,
    RunManifest,
    parse_retrieval_file,
    serialize_patterns,
)
from .gateway import (
    Handshake,
    HttpReaderBackend,
    MockReader,
    ReaderGateway,
    ReaderReply,
    ReaderRequest,
    ReplayBackend,
    ReplayCache,
    ReplayCacheKey,
    backend_from_spec,
    check_order_invariance,
)
from .metrics import (
    NORMALIZATION_VERSION,
    acem,
    exact_match,
    metrics_report,
    normalize_answer,
    semantic_em,
    ser,
)
from .patterns import (
    brute_force_subset_oracle,
    incremental_inference,
    label_types,
    leave_one_out,
    reconstruct,
)
from .selection import (
    PROBE3,
    attention_filter,
    attention_type_crosstab,
    default_probes,
    select_by_probe,
    selection_inference,
)
from .simlab import Bm25Index, build_bm25_index, run_injection_study, sample_negatives

__version__ = "0.1.0"
