import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lcacorrect.recover import recover_coefficients  # noqa: E402
from lcacorrect.synth import CORPUS_RG, ChequerSpec, apply_lca, render_chequerboard  # noqa: E402
from lcacorrect.warp import IDENTITY, Intrinsics  # noqa: E402

# acceptance results, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class BoardCase:
    """Full-size board with only the red plane distorted."""

    def __init__(self):
        self.spec = ChequerSpec()
        self.board = render_chequerboard(self.spec)
        self.intr = Intrinsics.for_shape(self.board.shape)
        self.applied_rg = CORPUS_RG
        self.applied_bg = IDENTITY
        self.img = apply_lca(self.board, self.applied_rg, self.applied_bg, self.intr)


@pytest.fixture(scope="session")
def board_case():
    return BoardCase()


@pytest.fixture(scope="session")
def board_recovery(board_case):
    return recover_coefficients(board_case.img, board_case.intr)


SWEEP_STEPS = 41


@pytest.fixture(scope="session")
def board_equalised(board_case):
    from lcacorrect.recover import equalised_planes

    return equalised_planes(board_case.img)


@pytest.fixture(scope="session")
def board_sweep(board_case, board_equalised):
    """41 x 41 (a, b) error grid for the red plane, c = d = 0."""
    from lcacorrect.recover import RecoverySettings, sweep_error_surface

    s = RecoverySettings()
    grid_a = np.linspace(s.bounds_a[0], s.bounds_a[1], SWEEP_STEPS)
    grid_b = np.linspace(s.bounds_bcd[0], s.bounds_bcd[1], SWEEP_STEPS)
    r_eq, g_eq, _ = board_equalised
    return grid_a, grid_b, sweep_error_surface(r_eq, g_eq, board_case.intr, grid_a, grid_b)


@pytest.fixture(scope="session")
def board_slice_fit(board_case, board_equalised):
    """Minimiser confined to the swept slice: a and b free, c = d = 0."""
    from lcacorrect.recover import RecoverySettings, minimise_bounded, objective

    r_eq, g_eq, _ = board_equalised
    return minimise_bounded(
        lambda c: objective(r_eq, g_eq, c, board_case.intr), RecoverySettings(), active=(0, 1)
    )
