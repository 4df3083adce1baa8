"""Parameter-amplified model views.

A view scales the learnable (gamma, beta) of the last ``k`` batch-norm
layers by a common factor ``omega`` and leaves everything else (weights,
running statistics) untouched. Views never copy or mutate the base graph:
they materialize only the per-channel override vectors, so any number of
views can evaluate concurrently against one shared model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .modelio import ModelGraph, forward

__all__ = ["AmplifiedView", "amplify", "view_forward"]


@dataclass(frozen=True)
class AmplifiedView:
    base: ModelGraph
    k: int
    omega: float
    overrides: dict = field(init=False, repr=False)

    def __post_init__(self):
        per_layer = {}
        for bn in self.base.bn_order[-self.k :]:
            per_layer[bn.name] = bn.params.scaled(self.omega)
        object.__setattr__(self, "overrides", per_layer)


def amplify(base: ModelGraph, k: int, omega: float, allow_shrink: bool = False) -> AmplifiedView:
    """Build the view with the last ``k`` BN layers scaled by ``omega``.

    Shrinking factors (omega < 1) degrade detection to uselessness, so they
    are rejected unless ``allow_shrink`` is set for ablation runs.
    """
    if not 1 <= k <= base.bn_count:
        raise ValueError(f"k must lie in [1, {base.bn_count}], got {k}")
    if not omega > 0:
        raise ValueError(f"omega must be > 0, got {omega}")
    if omega < 1 and not allow_shrink:
        raise ValueError(
            "omega < 1 shrinks parameters and destroys detection; "
            "pass allow_shrink=True for ablation runs"
        )
    return AmplifiedView(base=base, k=int(k), omega=float(omega))


def view_forward(view: AmplifiedView, batch: np.ndarray) -> np.ndarray:
    """Probabilities of the amplified view on [N, C, H, W] inputs."""
    return forward(view.base, batch, view.overrides)[1]
