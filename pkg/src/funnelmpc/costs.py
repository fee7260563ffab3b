"""Stage costs on auxiliary errors and control effort."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .funnel import cascade_batch, error_cascade

CLASSICAL = "classical"
FUNNEL = "funnel"


@dataclass(frozen=True)
class StageCost:
    """``kind`` is ``"classical"`` (squared errors) or ``"funnel"`` (gains)."""

    kind: str = CLASSICAL
    lam: float = 0.005

    def __post_init__(self):
        if self.kind not in (CLASSICAL, FUNNEL):
            raise ValueError(f"unknown stage cost kind {self.kind!r}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("control weight must be positive")

    def evaluate(self, e, k, u):
        """Cost from cascade values: ``e`` (r, ..., p), ``k`` (r, ...), ``u`` (..., p).

        Entries whose cascade is invalid (NaN gains) come out as ``+inf``.
        """
        effort = self.lam * np.sum(np.square(u), axis=-1)
        if self.kind == CLASSICAL:
            err = np.sum(np.square(e), axis=(0, -1))
        else:
            err = np.sum(k, axis=0)
        val = err + effort
        return np.where(np.all(np.isfinite(k), axis=0), val, np.inf)


def stage_cost_classical(plant, spec, ref, t, z, u, lam):
    """``sum_i |E_i(t, z)|^2 + lam |u|^2``; raises ``FunnelViolation`` outside."""
    c = error_cascade(plant, spec, ref, t, z)
    return float(np.sum(c.e ** 2) + lam * np.sum(np.square(u)))


def stage_cost_funnel(plant, spec, ref, t, z, u, lam):
    """``sum_i 1/(1 - phi_i^2 |E_i|^2) + lam |u|^2``; ``+inf`` on funnel contact."""
    cb = cascade_batch(plant, spec, ref, float(t), z)
    if not cb.valid:
        return float("inf")
    return float(np.sum(cb.k) + lam * np.sum(np.square(u)))
