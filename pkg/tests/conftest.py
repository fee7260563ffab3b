import numpy as np
import pytest

from funnelmpc.funnel import FunnelSpec, ReferenceSignal, cascade_batch
from funnelmpc.plant import MassOnCar, MassOnCarParams

R2_LEVELS = ((0.1, 5.0, 2.0), (0.5, 10.0, 2.0))
R3_LEVELS = ((0.1, 5.0, 2.0), (0.05, 1.4, 1.0), (0.05, 1.4, 1.0))


@pytest.fixture(scope="session")
def r2():
    return MassOnCar(), FunnelSpec.from_coefficients(R2_LEVELS), ReferenceSignal()


@pytest.fixture(scope="session")
def r3():
    plant = MassOnCar(MassOnCarParams(alpha=0.0))
    return plant, FunnelSpec.from_coefficients(R3_LEVELS), ReferenceSignal()


def _feasible_states(plant, spec, ref, n, seed=0, t_max=5.0, scale=2.0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        t = rng.uniform(0.0, t_max, 4096)
        z = rng.uniform(-scale, scale, (4096, 4))
        ok = cascade_batch(plant, spec, ref, t, z).margin > 1e-3
        out.extend(zip(t[ok], z[ok]))
    return out[:n]


@pytest.fixture
def feasible_states():
    """Sampler of random ``(t, z)`` pairs strictly inside every funnel."""
    return _feasible_states


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """``report(criterion, ok, detail)`` records one pass/fail line for the run summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def report(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":").rstrip("abcde"))):
            terminalreporter.write_line(line)
