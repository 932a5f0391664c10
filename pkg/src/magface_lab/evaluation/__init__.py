from .clustering import (
    ClusteringResult,
    ahc,
    bcubed_f,
    clustering_report,
    cosine_distance_matrix,
    dbscan,
    kmeans,
    nmi,
    relabel,
)
from .quality import (
    QualityScores,
    RejectCurve,
    aggregate_magface_plus,
    aggregate_mean,
    aggregate_templates,
    build_templates,
    error_versus_reject,
    rejected_mask,
    template_protocol,
)
from .verification import (
    PairProtocol,
    cosine_score,
    fnmr_at_fmr,
    pair_scores,
    tar_at_far,
    verification_table,
)
