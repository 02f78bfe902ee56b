import numpy as np
import pytest

from benders_il.cuts import FEASIBILITY, OPTIMALITY, AffineCut, CutStore


def random_store(rng, n_opt=None, n_feas=None, m=5):
    """Cut store with random integer-ish coefficients (ties are likely)."""
    n_opt = rng.integers(0, 5) if n_opt is None else n_opt
    n_feas = rng.integers(0, 3) if n_feas is None else n_feas
    store = CutStore()
    kinds = [OPTIMALITY] * n_opt + [FEASIBILITY] * n_feas
    rng.shuffle(kinds)
    for k, kind in enumerate(kinds):
        if kind == OPTIMALITY:
            alpha = float(rng.integers(-10, 10))
            beta = rng.integers(-6, 7, size=m).astype(float)
        else:
            alpha = float(rng.integers(-4, 2))
            beta = rng.integers(-3, 4, size=m).astype(float)
        store.add(AffineCut(kind, alpha, beta, k))
    return store


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sample(rng, label_index=None, with_feasibility=True):
    from benders_il.graph import make_sample
    from benders_il.problem import ADMISSIBLE

    store = random_store(rng, rng.integers(1, 5), rng.integers(1, 3) if with_feasibility else 0)
    y_prev = ADMISSIBLE[rng.integers(len(ADMISSIBLE))]
    j = int(rng.integers(len(ADMISSIBLE))) if label_index is None else label_index
    return make_sample(store, y_prev, j, ADMISSIBLE[j], instance_seed=int(rng.integers(100)))


def max_gradient_error(params, sample, mode="stage1", omega=0.0, h=1e-5):
    """Worst relative error of analytic vs central-difference gradients.

    The error of each parameter array is scaled by the larger of the two
    gradients' max-norms.
    """
    from benders_il.policy import loss_and_grad
    from benders_il.problem import ADMISSIBLE

    _, grads = loss_and_grad(params, sample, mode, omega, ADMISSIBLE)
    worst = 0.0
    for name, arr in params.arrays.items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_and_grad(params, sample, mode, omega, ADMISSIBLE)[0]
            arr[idx] = orig - h
            down = loss_and_grad(params, sample, mode, omega, ADMISSIBLE)[0]
            arr[idx] = orig
            num[idx] = (up - down) / (2 * h)
        scale = max(np.abs(num).max(), np.abs(grads[name]).max(), 1e-8)
        worst = max(worst, float(np.abs(num - grads[name]).max() / scale))
    return worst


# one verdict line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_VERDICTS):
        terminalreporter.write_line(ACCEPTANCE_VERDICTS[n])
