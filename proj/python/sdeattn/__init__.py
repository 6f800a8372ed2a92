"""Latent-SDE sequence modeling: generators, masking transforms, and
config-driven training, backed by the C++ core."""

from ._core import (
    __version__,
    apply_mcar,
    brownian_increments,
    config_echo,
    generate_periodic,
    generate_two_class,
    hold_out_observation,
    ou_noise,
    run_sweep,
    train_cell,
)

__all__ = [
    "__version__",
    "apply_mcar",
    "brownian_increments",
    "config_echo",
    "generate_periodic",
    "generate_two_class",
    "hold_out_observation",
    "ou_noise",
    "run_sweep",
    "train_cell",
]
