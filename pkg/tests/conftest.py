import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from arraymom.array_model import ComponentSet, build_array
from arraymom.direct import direct_impedance, translation_index
from arraymom.kernel import KernelParams
from arraymom.mesh import build_rwg_basis
from arraymom.toeplitz import StorageMode, assemble
from arraymom.toy import StripArray

K = 2 * math.pi          # wavelength 1 m
FEED_EDGE = 52           # strip edge at the element centre, see configs/

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for the terminal summary, then assert it."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        request.config.stash[_VERDICTS][label] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for label in sorted(lines):
            terminalreporter.write_line(lines[label])


@pytest.fixture(scope="session")
def params():
    return KernelParams(K)


@pytest.fixture(scope="session")
def toy():
    return StripArray()


@pytest.fixture(scope="session")
def components(toy):
    return ComponentSet.from_mesh(toy.mesh(), toy.boxes(), toy.pitch)


@pytest.fixture(scope="session")
def model23(components):
    return build_array(components, 2, 3)


@pytest.fixture(scope="session")
def rep23(model23, params):
    return assemble(model23, params, StorageMode.SPARSE)


@pytest.fixture(scope="session")
def dense23(rep23):
    return rep23.reconstruct_full()[0]


@pytest.fixture(scope="session")
def direct23(toy, model23, params):
    """Directly meshed 2 x 3 array: (basis, Z, index, sign)."""
    basis = build_rwg_basis(toy.mesh(2, 3))
    z = direct_impedance(basis, params)
    index, sign = translation_index(model23, basis)
    return basis, z, index, sign


def permuted_direct(direct):
    _, z, index, sign = direct
    return sign[:, None] * sign[None, :] * z[np.ix_(index, index)]


def max_rel(a, b):
    """Largest entrywise deviation relative to the largest reference entry."""
    return float(np.abs(np.asarray(a) - np.asarray(b)).max() / np.abs(b).max())
