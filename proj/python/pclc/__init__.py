"""Zero-shot cross-domain slot filling with prototypical contrastive learning
and label confusion.

Thin wrapper over the C++ core in ``pclc._pclc``.
"""

from ._pclc import (
    PclcError,
    cli,
    config_keys,
    confusion_target,
    crf_log_partition,
    crf_nll,
    describe_slot,
    early_stop_check,
    evaluate,
    format_double,
    kl_confusion_loss,
    parse_conll,
    proto_contrastive_loss,
    smooth_distribution,
    span_f1,
    train,
    viterbi_decode,
)

__all__ = [
    "PclcError",
    "cli",
    "config_keys",
    "confusion_target",
    "crf_log_partition",
    "crf_nll",
    "describe_slot",
    "early_stop_check",
    "evaluate",
    "format_double",
    "kl_confusion_loss",
    "parse_conll",
    "proto_contrastive_loss",
    "smooth_distribution",
    "span_f1",
    "train",
    "viterbi_decode",
]
