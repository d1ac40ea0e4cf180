import sys
import time

import numpy as np
import pytest

from tnkit.convex_builder import witness_energy
from tnkit.embedding import Embedder, embedding_checks, find_tau0, graph_residual_law, o5_constants
from tnkit.param_family import reference_Zstar

LAMBDAS = [0.5, 0.7, 0.8, 0.9, 0.95, 0.99]


@pytest.fixture(scope="session")
def witness_run():
    """(F, H, certificate, seconds) for the witness energy at the reference parameter, n = 2."""
    t0 = time.perf_counter()
    F, H, rep = witness_energy(reference_Zstar(2), seed=0)
    return F, H, rep, time.perf_counter() - t0


@pytest.fixture(scope="session")
def mp_embedder(witness_run):
    F = witness_run[0]
    return Embedder(F, reference_Zstar(2), dps=60)


@pytest.fixture(scope="session")
def embedding_run(witness_run, mp_embedder):
    """tau0 search on 50 samples and the bundled identity checks; shared by several suites."""
    rep = witness_run[2]
    t0 = time.perf_counter()
    tau0, sols = find_tau0(mp_embedder, floor=1e-40, rng=np.random.default_rng(0), samples=50)
    t1 = time.perf_counter()
    ratios = {i: rep.N[i] / rep.J[i] for i in range(1, 6)}
    checks = embedding_checks(mp_embedder, ratios, tau0, sols, rng=np.random.default_rng(1))
    t2 = time.perf_counter()
    return {"tau0": tau0, "sols": sols, "checks": checks, "ratios": ratios, "seconds": (t1 - t0, t2 - t1)}


@pytest.fixture(scope="session")
def residual_law_run(mp_embedder, embedding_run):
    t0 = time.perf_counter()
    o5 = o5_constants(
        mp_embedder,
        rng=np.random.default_rng(0),
        y_samples=2,
        tau0_floor=1e-40,
        tau0_result=(embedding_run["tau0"], embedding_run["sols"]),
    )
    law = graph_residual_law(mp_embedder, o5, LAMBDAS)
    return {"o5": o5, "law": law, "seconds": time.perf_counter() - t0}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
