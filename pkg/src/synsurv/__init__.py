"""Non-specific syndromic surveillance toolkit.

Counts every low-order syndrome in a categorical patient stream, scores each
time slot for outbreak likelihood with statistical and reference-set
detectors, simulates and injects labeled outbreaks, and evaluates detectors
by partial area under the alarm curve.
"""

from .detectors import (
    ANOMALY_BACKENDS,
    DETECTOR_KINDS,
    DetectorConfig,
    DetectorError,
    DiagonalGaussianBackend,
    ScoreSeries,
    register_anomaly_backend,
    run_detector,
    score_adapted_anomaly,
    score_global,
    score_stat_benchmark,
    score_wsare,
)
from .evaluate import AmocResult, aauc, amoc_curve, evaluate_corpus, evaluate_scores, evaluate_stream
from .io import load_corpus, load_stream, load_stream_dir, write_stream
from .simulate import (
    Cpt,
    CycleProcess,
    GeneratorSpec,
    MarkovProcess,
    OutbreakSpec,
    default_generator_spec,
    generate_corpus,
    generate_stream,
    inject_corpus,
    inject_outbreak,
    load_generator_spec,
    simulate_outbreak_boost,
)
from .stats import (
    ContingencyTable2x2,
    FittedTailModel,
    chi_square_p,
    fisher_exact_p,
    fit_tail_model,
    permutation_min_p,
    permutation_min_p_records,
    tail_probability,
)
from .stream import (
    DataStream,
    OutbreakLabel,
    PatientRecord,
    SchemaError,
    StreamSchema,
    Syndrome,
    TimeSlot,
    record_matches,
)
from .syndromes import (
    CountMatrix,
    SlotCounter,
    SyndromeCountSeries,
    build_count_matrix,
    count_slot,
    enumerate_syndromes,
)

__version__ = "0.1.0"
