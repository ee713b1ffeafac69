"""Contrastive pre-training with feature augmentation."""

from facl._core import (
    FeatureBank,
    byol_similarity,
    feature_augment,
    gen_synthetic,
    get_precision,
    info_nce,
    pair_table,
    parse_config,
    pretrain,
    probe,
    set_precision,
)

__all__ = [
    "FeatureBank",
    "byol_similarity",
    "feature_augment",
    "gen_synthetic",
    "get_precision",
    "info_nce",
    "pair_table",
    "parse_config",
    "pretrain",
    "probe",
    "set_precision",
]
