"""Python access to the coupleface distillation core."""

from ._core import (
    Error,
    build_informative_sets,
    compute_prototypes,
    config_entries,
    error_name,
    fcd_loss,
    gen_synthetic,
    rad_loss,
    rad_term,
    rank1_id,
    read_dataset,
    read_embeddings,
    run_cli,
    tar_at_far,
    write_dataset,
    write_embeddings,
)

__all__ = [
    "Error",
    "build_informative_sets",
    "compute_prototypes",
    "config_entries",
    "error_name",
    "fcd_loss",
    "gen_synthetic",
    "rad_loss",
    "rad_term",
    "rank1_id",
    "read_dataset",
    "read_embeddings",
    "run_cli",
    "tar_at_far",
    "write_dataset",
    "write_embeddings",
]
