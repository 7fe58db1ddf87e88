import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skewbvar.model import ModelSpec, ParameterDraw, Variant  # noqa: E402


def random_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 0.2) -> ParameterDraw:
    N, K = spec.n_vars, spec.n_states
    P, L, Q = spec.p_obs_lags, spec.l_inmean_lags, spec.q_state_lags
    A = np.eye(N) + np.tril(rng.normal(scale=0.5, size=(N, N)), -1)
    theta = np.diag(rng.uniform(0.5, 0.9, K))
    if spec.variant is not Variant.SV_ONLY:
        theta[:N, :N] += np.tril(rng.normal(scale=0.05, size=(N, N)), -1)
    G = rng.normal(scale=0.3, size=(K, K))
    params = ParameterDraw(
        c=rng.normal(size=N), B=rng.normal(scale=scale, size=(P, N, N)),
        b=rng.normal(scale=scale, size=(L, N, N)), a=rng.normal(scale=scale, size=(L, N, N)),
        A=A, alpha=rng.normal(scale=0.1, size=K), theta=theta,
        dy=rng.normal(scale=0.05, size=(Q, K, N)), qcov=0.1 * (G @ G.T + np.eye(K)),
    )
    if spec.variant is Variant.RESTRICTED:
        params = params.replace(b=np.zeros((L, N, N)), a=np.zeros((L, N, N)), dy=np.zeros((Q, K, N)))
    elif spec.variant is Variant.SV_ONLY:
        params = params.replace(a=np.zeros((L, N, N)))
    return params


@pytest.fixture
def nprng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list = []


def record(criterion: str, ok: bool, detail: str = "") -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
