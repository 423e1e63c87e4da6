"""Desk-scale open-set recognition lab.

Metric-learning OSR (margin one-vs-rest loss, loss-based unknown detection)
with input-Jacobian diagnostics, backed by a C++ core.
"""

from osrlab._core import (  # noqa: F401
    ConfigError,
    EmbeddingNet,
    PrototypeBank,
    __version__,
    auc,
    class_similarities,
    cosine_lr,
    cosine_sim,
    dbi,
    detection_score,
    fd_jacobian,
    gen_blobs,
    interpolation_probe,
    jnd,
    load_idx,
    macro_f1,
    margin_similarity,
    movr_loss,
    parse_config_check,
    path_length,
    pseudo_label,
    rotate90,
    rotation_ssl_loss,
    run_experiment,
    sce_loss,
    support_volume_estimate,
    threshold_at_rejection,
    unit_normalize,
)

__all__ = [
    "ConfigError",
    "EmbeddingNet",
    "PrototypeBank",
    "__version__",
    "auc",
    "class_similarities",
    "cosine_lr",
    "cosine_sim",
    "dbi",
    "detection_score",
    "fd_jacobian",
    "gen_blobs",
    "interpolation_probe",
    "jnd",
    "load_idx",
    "macro_f1",
    "margin_similarity",
    "movr_loss",
    "parse_config_check",
    "path_length",
    "pseudo_label",
    "rotate90",
    "rotation_ssl_loss",
    "run_experiment",
    "sce_loss",
    "support_volume_estimate",
    "threshold_at_rejection",
    "unit_normalize",
]
