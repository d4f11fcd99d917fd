import numpy as np
import pytest

from chstep import CahnHilliardProblem, GridSpec, LaplacianOperator, build_laplacian, epsilon_m


def grid_problem(n, eyre=False, eps=None, length=None, ny=None):
    """``n x ny`` grid with unit spacing unless ``length`` is given."""
    ny = ny or n
    spec = GridSpec(n, ny, length or n, length or ny)
    eps = epsilon_m(1.0, 4) if eps is None else eps
    return CahnHilliardProblem(build_laplacian(spec), eps, use_eyre=eyre)


def random_spd(rng, n, scale=1.0):
    b = rng.standard_normal((n, n))
    return scale * (b @ b.T / n + 0.1 * np.eye(n))


def spd_problem(rng, n, eyre=False, eps=None):
    A = LaplacianOperator.from_matrix(random_spd(rng, n))
    eps = rng.uniform(0.2, 1.0) if eps is None else eps
    return CahnHilliardProblem(A, eps, use_eyre=eyre)


def dense_A_hat(problem, y):
    a = problem.A.toarray()
    return a @ (np.diag(3 * y**2 - 1 + problem.shift) + problem.epsilon**2 * a)


def dense_g_hat(problem, y):
    a = problem.A.toarray()
    return a @ ((3 * y**2 - 1 + problem.shift) * y - y * (y**2 - 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def report(criterion, name, ok, detail):
    line = f"ACCEPTANCE {criterion:>2} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
