"""Control-affine plants with analytic output-derivative jets.

Only the mass-spring system mounted on a car ships here.  Its state is
``z = (x, xdot, s, sdot)``: car position and velocity, displacement and
velocity of the mass on the ramp.  The output is the horizontal position of
the ramp mass, ``y = x + s cos(alpha)``.

Array conventions: states have shape ``(..., n)``, inputs and outputs
``(..., p)``; jets stack derivative orders on a new leading axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OrderExceedsRelativeDegree

ALPHA_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class MassOnCarParams:
    m1: float = 4.0
    m2: float = 1.0
    k: float = 2.0
    d: float = 1.0
    alpha: float = math.pi / 4

    def __post_init__(self):
        for name in ("m1", "m2", "k", "d"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if not (0.0 <= self.alpha < math.pi / 2):
            raise ValueError(f"alpha must lie in [0, pi/2), got {self.alpha!r}")

    @property
    def det_mass(self):
        return self.m2 * (self.m1 + self.m2 * math.sin(self.alpha) ** 2)


def relative_degree(params):
    """3 when the ramp is horizontal (alpha == 0), else 2."""
    return 3 if abs(params.alpha) <= ALPHA_ZERO_TOL else 2


def mass_on_car_matrices(m1, m2, k, d, alpha):
    """``(A, B, C)`` of the linear state-space form ``zdot = A z + B u, y = C z``.

    No admissibility checks, so identification may probe the closed box
    ``alpha in [0, pi/2]``.
    """
    ca, sa = math.cos(alpha), math.sin(alpha)
    det = m2 * (m1 + m2 * sa * sa)
    A = np.zeros((4, 4))
    A[0, 1] = 1.0
    A[2, 3] = 1.0
    # xddot = (m2 u + m2 cos(a) (k s + d sdot)) / det
    A[1, 2] = m2 * ca * k / det
    A[1, 3] = m2 * ca * d / det
    # sddot = (-m2 cos(a) u - (m1 + m2)(k s + d sdot)) / det
    A[3, 2] = -(m1 + m2) * k / det
    A[3, 3] = -(m1 + m2) * d / det
    B = np.array([[0.0], [m2 / det], [0.0], [-m2 * ca / det]])
    C = np.array([[1.0, 0.0, ca, 0.0]])
    return A, B, C


class MassOnCar:
    """The mass-on-car plant for a fixed parameter set.

    Relative degree is structural: 2 for ``0 < alpha < pi/2`` and 3 for
    ``alpha == 0``.  The high-gain coefficient is positive in both cases.
    """

    n_states = 4
    n_inputs = 1

    def __init__(self, params=None):
        self.params = params if params is not None else MassOnCarParams()
        self.r = relative_degree(self.params)
        self.A, self.B, self.C = mass_on_car_matrices(
            self.params.m1, self.params.m2, self.params.k, self.params.d, self.params.alpha
        )
        self._jet_matrix = self.output_jet(np.eye(4), self.r - 1)[..., 0]
        self._jet_matrix.flags.writeable = False
        self.A.flags.writeable = False
        self.B.flags.writeable = False
        self.C.flags.writeable = False

    def __repr__(self):
        return f"MassOnCar({self.params!r})"

    @property
    def relative_degree(self):
        return self.r

    def jet_matrix(self):
        """Rows map ``z`` to ``y, ydot, ..., y^(r-1)`` (the jets are linear here)."""
        return self._jet_matrix

    def state_space(self):
        """Linear form ``(A, B, C)``; enables exact fast paths downstream."""
        return self.A, self.B, self.C

    def dynamics(self, z, u):
        """``zdot`` for state(s) ``z`` under input(s) ``u``."""
        p = self.params
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        if u.ndim and u.shape[-1] == 1:
            u = u[..., 0]
        ca = math.cos(p.alpha)
        det = p.det_mass
        s, sd = z[..., 2], z[..., 3]
        force = p.k * s + p.d * sd
        xdd = (p.m2 * u + p.m2 * ca * force) / det
        sdd = (-p.m2 * ca * u - (p.m1 + p.m2) * force) / det
        out = np.empty(np.broadcast_shapes(z.shape, np.shape(xdd) + (4,)))
        out[..., 0] = z[..., 1]
        out[..., 1] = xdd
        out[..., 2] = sd
        out[..., 3] = sdd
        return out

    def mass_matrix(self):
        p = self.params
        ca = math.cos(p.alpha)
        return np.array([[p.m1 + p.m2, p.m2 * ca], [p.m2 * ca, p.m2]])

    def output(self, z):
        z = np.asarray(z, dtype=float)
        return (z[..., 0] + z[..., 2] * math.cos(self.params.alpha))[..., None]

    def output_jet(self, z, order=None):
        """``(y, ydot, ..., y^(order))``, shape ``(order+1, ..., p)``.

        Every entry is input-free; ``order`` defaults to ``r - 1``.
        """
        if order is None:
            order = self.r - 1
        if order >= self.r or order < 0:
            raise OrderExceedsRelativeDegree(
                f"jet order {order} not input-free for relative degree {self.r}"
            )
        p = self.params
        ca = math.cos(p.alpha)
        z = np.asarray(z, dtype=float)
        jet = np.empty((order + 1,) + z.shape[:-1] + (1,))
        jet[0, ..., 0] = z[..., 0] + z[..., 2] * ca
        if order >= 1:
            jet[1, ..., 0] = z[..., 1] + z[..., 3] * ca
        if order >= 2:
            # alpha == 0 only
            jet[2, ..., 0] = -(p.k * z[..., 2] + p.d * z[..., 3]) / p.m2
        return jet

    def drift_top(self, z):
        """Input-free part of ``y^(r)``."""
        p = self.params
        z = np.asarray(z, dtype=float)
        force = p.k * z[..., 2] + p.d * z[..., 3]
        if self.r == 2:
            return (-p.m1 * math.cos(p.alpha) * force / p.det_mass)[..., None]
        # y''' = -(k sdot + d sddot)/m2 with the input-free part of sddot
        sdd_free = -(p.m1 + p.m2) * force / p.det_mass
        return (-(p.k * z[..., 3] + p.d * sdd_free) / p.m2)[..., None]

    def high_gain(self, z=None):
        """Coefficient of ``u`` in ``y^(r)``, shape ``(..., p, p)``."""
        p = self.params
        if self.r == 2:
            sa2 = math.sin(p.alpha) ** 2
            g = sa2 / (p.m1 + p.m2 * sa2)
        else:
            g = p.d / (p.m1 * p.m2)
        shape = () if z is None else np.shape(z)[:-1]
        return np.full(shape + (1, 1), g)
