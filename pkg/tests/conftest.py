import numpy as np
import pytest

from twostage_dro.ambiguity import AmbiguityParameters
from twostage_dro.evalsuite import ExperimentConfig, build_instance, make_partition, sample_family


def make_case(family="newsvendor", seed=0, N=4, K=None, M=1, eps=0.0, gamma=0.0, delta=None, **kw):
    """Small random instance with a from-samples partition and fixed radii."""
    cfg = ExperimentConfig(family=family, M=M, n_train=(N,), seed=seed, delta=delta, K=K, **kw)
    rng = np.random.default_rng(seed)
    problem = build_instance(cfg, rng)
    samples = sample_family(cfg, N, rng)
    scheme = make_partition(problem, samples, K or N, cfg.constructors, seed)
    amb = AmbiguityParameters(np.full(scheme.K, float(eps)), gamma)
    return problem, scheme, amb, samples


@pytest.fixture
def case_factory():
    return make_case


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the end-of-run acceptance summary."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
