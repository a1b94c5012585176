import itertools

import numpy as np
import pytest

from dalperf.data import Dataset, infer_schema


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or [f"x{j}" for j in range(X.shape[1])]
    return Dataset(infer_schema(names, X), X, y)


def vp8_like():
    """18 samples shaped like the VP8 tree: rtQuality splits first, then threads > 5 under it."""
    rows, ys = [], []
    for t in range(1, 9):
        rows.append((0, t))
        ys.append(20.0)
    for t in range(1, 6):
        rows.append((1, t))
        ys.append(112.0)
    for t in range(6, 11):
        rows.append((1, t))
        ys.append(150.0)
    return make_dataset(rows, ys, ["rtQuality", "threads"])


def apache_like(seed=0):
    """192 distinct configurations over 9 binary options (Apache's shape)."""
    rng = np.random.default_rng(seed)
    full = np.array(list(itertools.product([0, 1], repeat=9)), dtype=float)
    X = full[np.sort(rng.choice(len(full), 192, replace=False))]
    y = 500 + X @ rng.uniform(10, 200, 9) + 80 * X[:, 0] * X[:, 1]
    return make_dataset(X, y, [f"opt{j}" for j in range(9)])


FAST_RDNN = {"width": 16, "depths": [1, 2], "lambdas": [0.01, 1.0], "epochs": 150, "patience": 30}


@pytest.fixture
def vp8():
    return vp8_like()


@pytest.fixture
def apache():
    return apache_like()


def gradient_config(seed, margin=1e-3):
    """Random small network + batch whose ReLU inputs and (penalised) weights stay clear of 0.

    Finite differences are only meaningful away from the kinks of ReLU and |w|, so draws that land
    within ``margin`` of a kink are redrawn.
    """
    from dalperf.rdnn import RdnnModel, forward, init_params

    rng = np.random.default_rng(seed)
    while True:
        p = int(rng.integers(1, 5))
        widths = [p] + [int(rng.integers(2, 6))] * int(rng.integers(1, 4)) + [1]
        weights, biases = init_params(widths, rng)
        biases = [b + rng.normal(scale=0.1, size=b.shape) for b in biases]
        lam = float(rng.choice([0.0, 0.01, 0.1, 1.0, 10.0]))
        X = rng.uniform(size=(int(rng.integers(1, 8)), p))
        y = rng.normal(size=len(X))
        _, acts = forward(weights, biases, X)
        pre = [acts[k] @ weights[k] + biases[k] for k in range(len(weights) - 1)]
        if any(np.abs(z).min() < margin for z in pre):
            continue
        if lam > 0 and min(np.abs(W).min() for W in weights) < margin:
            continue
        return RdnnModel(widths, weights, biases, lam), X, y


# one line per acceptance criterion, echoed at the end of the pytest run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
