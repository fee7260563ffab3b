"""Funnel boundaries, the auxiliary-error cascade and the funnel controller.

Time-derivatives are propagated as jets: arrays whose leading axis holds
``(f, f', f'', ...)``.  Products and reciprocals of jets follow the Leibniz
rule, so every auxiliary error ``e_i`` comes with exact derivatives up to
the order the next level needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FunnelViolation

__all__ = [
    "FunnelLevel",
    "FunnelSpec",
    "ReferenceSignal",
    "ErrorCascade",
    "CascadeBatch",
    "jet_mul",
    "jet_recip",
    "boundary",
    "cascade_batch",
    "scalar_cascade",
    "funnel_control_batch",
    "error_cascade",
    "funnel_control",
    "margin",
    "gain",
]


# -- jet arithmetic ---------------------------------------------------------

def _binom(n, j):
    return math.comb(n, j)


def jet_mul(a, b, order=None):
    """Leibniz product of two jets (broadcasting over trailing axes)."""
    if order is None:
        order = min(len(a), len(b)) - 1
    out = []
    for n in range(order + 1):
        acc = a[0] * b[n]
        for j in range(1, n + 1):
            acc = acc + _binom(n, j) * a[j] * b[n - j]
        out.append(acc)
    return np.stack(out)


def jet_inner(a, b, order=None):
    """Jet of ``<a, b>`` for vector-valued jets (inner product on the last axis)."""
    return jet_mul(a, b, order).sum(axis=-1)


def jet_recip(f, order=None):
    """Jet of ``1/f``; requires ``f[0] != 0``."""
    if order is None:
        order = len(f) - 1
    g = [1.0 / f[0]]
    for n in range(1, order + 1):
        acc = f[n] * g[0]
        for j in range(1, n):
            acc = acc + _binom(n, j) * f[j] * g[n - j]
        g.append(-acc * g[0])
    return np.stack(g)


def jet_shift(f):
    """Time derivative of a jet (drops the top order)."""
    return f[1:]


# -- funnels and references -------------------------------------------------

@dataclass(frozen=True)
class FunnelLevel:
    """Boundary ``1/phi(t) = a + b exp(-c t)``."""

    a: float
    b: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ValueError(f"funnel asymptote a must be positive, got {self.a!r}")
        if not (self.b >= 0 and self.c >= 0 and np.isfinite(self.b) and np.isfinite(self.c)):
            raise ValueError("funnel coefficients b, c must be finite and non-negative")

    def boundary_jet(self, t, order):
        t = np.asarray(t, dtype=float)
        ex = self.b * np.exp(-self.c * t)
        out = [self.a + ex]
        for n in range(1, order + 1):
            out.append((-self.c) ** n * ex)
        return np.stack(out)


@dataclass(frozen=True)
class FunnelSpec:
    """One funnel level per auxiliary error plus the controller sign."""

    levels: tuple
    sigma: float = -1.0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ValueError("need at least one funnel level")
        if self.sigma not in (-1.0, 1.0):
            raise ValueError("sigma must be +1 or -1")

    @property
    def r(self):
        return len(self.levels)

    @classmethod
    def from_coefficients(cls, coeffs, sigma=-1.0):
        return cls(tuple(FunnelLevel(*c) for c in coeffs), sigma)


def boundary(spec, i, t, order=None):
    """Jet of ``1/phi_i`` at ``t`` up to ``order`` (default ``r - i``)."""
    if order is None:
        order = spec.r - i
    return spec.levels[i].boundary_jet(t, order)


@dataclass(frozen=True)
class ReferenceSignal:
    """``y_ref(t) = offset + amplitude * cos(frequency * t + phase)``."""

    amplitude: float = 1.0
    frequency: float = 1.0
    phase: float = 0.0
    offset: float = 0.0

    def jet(self, t, order):
        t = np.asarray(t, dtype=float)
        arg = self.frequency * t + self.phase
        out = []
        for n in range(order + 1):
            v = self.amplitude * self.frequency ** n * np.cos(arg + n * math.pi / 2)
            if n == 0:
                v = v + self.offset
            out.append(v)
        return np.stack(out)[..., None]

    def __call__(self, t):
        return self.jet(t, 0)[0]


def gain(phi, e_norm):
    """Funnel gain ``1 / (1 - phi^2 |e|^2)``."""
    return 1.0 / (1.0 - (phi * e_norm) ** 2)


# -- cascade ----------------------------------------------------------------

@dataclass(frozen=True)
class CascadeBatch:
    """Vectorised cascade values; invalid entries are NaN past the first exit.

    Shapes: ``e`` (r, *batch, p), ``k``/``bound``/``margins`` (r, *batch).
    """

    e: np.ndarray
    k: np.ndarray
    bound: np.ndarray
    margins: np.ndarray
    jets: tuple

    @property
    def valid(self):
        return np.all(self.margins > 0, axis=0)

    @property
    def margin(self):
        # a violated level is finite and <= 0, deeper levels are NaN
        return np.fmin.reduce(self.margins, axis=0)


def cascade_batch(plant, spec, ref, t, z, gain_clip=None):
    """Auxiliary errors and gains for many ``(t, z)`` at once, without raising.

    ``gain_clip`` caps ``phi^2 |e|^2`` below 1 so that all levels stay
    defined outside the funnel (used for feasibility restoration only).
    """
    r = plant.relative_degree
    if spec.r != r:
        raise ValueError(f"funnel spec has {spec.r} levels, plant relative degree is {r}")
    z = np.asarray(z, dtype=float)
    # time-only quantities are evaluated on t's own shape and broadcast later
    t = np.asarray(t, dtype=float)
    # jets are kept as lists of arrays here to avoid restacking per product
    e = list(plant.output_jet(z, r - 1) - ref.jet(t, r - 1))
    es, ks, bounds, margins, jets = [], [], [], [], []
    with np.errstate(all="ignore"):
        for i in range(r):
            order = r - 1 - i
            beta = list(spec.levels[i].boundary_jet(t, order))
            phi = _frecip(beta)
            sq = [v.sum(axis=-1) for v in _fmul(e, e, order)]
            q = _fmul(_fmul(phi, phi, order), sq, order)
            norm = np.sqrt(sq[0])
            m = beta[0] - norm
            inside = q[0] < 1.0
            if gain_clip is not None:
                over = q[0] > gain_clip
                q = [np.where(over, gain_clip, q[0])] + [np.where(over, 0.0, v) for v in q[1:]]
                inside = np.ones_like(inside)
            k = _frecip([1.0 - q[0]] + [-v for v in q[1:]])
            k = [np.where(inside, v, np.nan) for v in k]
            es.append(e[0])
            ks.append(k[0])
            bounds.append(np.broadcast_to(beta[0], m.shape))
            margins.append(m)
            jets.append(np.stack(e))
            if i < r - 1:
                e = _next_level(e, k, order)
    return CascadeBatch(
        e=np.stack(es), k=np.stack(ks), bound=np.stack(bounds),
        margins=np.stack(margins), jets=tuple(jets),
    )


def _next_level(e, k, order):
    """``e_{i+1} = de_i/dt + k_i e_i`` as a list jet of order ``order - 1``."""
    prod = _fmul([v[..., None] for v in k], e, order - 1)
    return [a + b for a, b in zip(e[1:], prod)]


def _fmul(a, b, order):
    """Leibniz product of list jets (entries may be floats or arrays)."""
    if order == 0:
        return [a[0] * b[0]]
    if order == 1:
        return [a[0] * b[0], a[0] * b[1] + a[1] * b[0]]
    if order == 2:
        return [a[0] * b[0], a[0] * b[1] + a[1] * b[0],
                a[0] * b[2] + 2.0 * (a[1] * b[1]) + a[2] * b[0]]
    return [
        sum(math.comb(n, j) * a[j] * b[n - j] for j in range(n + 1))
        for n in range(order + 1)
    ]


def _frecip(f):
    """Jet of ``1/f`` for a list jet."""
    g0 = 1.0 / f[0]
    if len(f) == 1:
        return [g0]
    g1 = -f[1] * g0 * g0
    if len(f) == 2:
        return [g0, g1]
    g = [g0, g1]
    for n in range(2, len(f)):
        acc = sum(math.comb(n, j) * f[j] * g[n - j] for j in range(1, n + 1))
        g.append(-acc * g0)
    return g


def scalar_cascade(plant, spec, ref, t, z):
    """Float-only SISO cascade at one point: ``(e, k, bound)`` lists.

    Same recursion as :func:`cascade_batch`; avoids array overhead inside
    integrator right-hand sides.  ``k`` is NaN from the first exited level on.
    """
    r = spec.r
    jm = getattr(plant, "jet_matrix", None)
    if jm is not None:
        yj = (jm() @ z).tolist()
    else:
        yj = plant.output_jet(z, r - 1)[:, 0].tolist()
    w, ph, A = ref.frequency, ref.phase, ref.amplitude
    arg = w * t + ph
    e = [
        yj[n] - (A * w ** n * math.cos(arg + n * math.pi / 2) + (ref.offset if n == 0 else 0.0))
        for n in range(r)
    ]
    es, ks, bounds = [], [], []
    ok = True
    for i in range(r):
        order = r - 1 - i
        lv = spec.levels[i]
        ex = lv.b * math.exp(-lv.c * t)
        beta = [lv.a + ex] + [(-lv.c) ** n * ex for n in range(1, order + 1)]
        phi = _frecip(beta)
        q = _fmul(_fmul(phi, phi, order), _fmul(e, e, order), order)
        es.append(e[0])
        bounds.append(beta[0])
        if not ok or q[0] >= 1.0:
            ok = False
            ks.append(math.nan)
            if i < r - 1:
                e = [math.nan] * order
            continue
        k = _frecip([1.0 - q[0]] + [-v for v in q[1:]])
        ks.append(k[0])
        if i < r - 1:
            ke = _fmul(k, e, order - 1)
            e = [e[n + 1] + ke[n] for n in range(order)]
    return es, ks, bounds


@dataclass(frozen=True)
class ErrorCascade:
    """Auxiliary errors, gains and boundaries at a single ``(t, z)``."""

    t: float
    e: np.ndarray
    k: np.ndarray
    bound: np.ndarray
    jets: tuple

    @property
    def margins(self):
        return self.bound - np.linalg.norm(self.e, axis=-1)

    @property
    def valid(self):
        return bool(np.all(self.margins > 0))


def error_cascade(plant, spec, ref, t, z):
    """Cascade at one point; raises :class:`FunnelViolation` on funnel exit."""
    cb = cascade_batch(plant, spec, ref, float(t), z)
    for i in range(spec.r):
        m = cb.margins[i]
        if not m > 0:
            raise FunnelViolation(i, t, m if np.isfinite(m) else -np.inf)
    return ErrorCascade(float(t), cb.e, cb.k, cb.bound, cb.jets)


def funnel_control(plant, spec, ref, t, z):
    """``u = sigma * k_{r-1} * e_{r-1}``."""
    c = error_cascade(plant, spec, ref, t, z)
    return spec.sigma * c.k[-1] * c.e[-1]


def funnel_control_batch(plant, spec, ref, t, z):
    """Vectorised control law; NaN where the cascade is invalid."""
    cb = cascade_batch(plant, spec, ref, t, z)
    u = spec.sigma * cb.k[-1][..., None] * cb.e[-1]
    return np.where(cb.valid[..., None], u, np.nan), cb


def margin(cascade, spec=None, t=None):
    """Smallest distance ``1/phi_i - |e_i|`` over all levels."""
    return float(np.min(cascade.margins))
