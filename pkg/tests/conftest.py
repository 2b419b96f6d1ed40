import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ergodic_harvest import build_catalog_model, solve_threshold  # noqa: E402

POWER = {"kind": "power", "a": 0.5, "c": 1.0}

# name -> (kind, params, payoff)
CATALOG = {
    "logistic_zero": ("logistic", {"kappa": 1.0, "gamma": 1.0, "sigma": 0.5}, None),
    "logistic_power": ("logistic", {"kappa": 1.0, "gamma": 1.0, "sigma": 0.5}, POWER),
    "log_ou_zero": ("log_ou", {"kappa": 1.0, "gamma": 0.0, "sigma": 1.0}, None),
    "log_ou_power": ("log_ou", {"kappa": 1.0, "gamma": 0.0, "sigma": 1.0}, POWER),
    "mean_revert_half": ("mean_revert", {"kappa": 1.0, "gamma": 1.0, "sigma": 0.4, "ell": 0.5}, POWER),
    "mean_revert_3q": ("mean_revert", {"kappa": 1.0, "gamma": 1.0, "sigma": 0.4, "ell": 0.75}, POWER),
}

# (beta*, lambda*) from oracles.grid_search_pair (Simpson in log space, zoomed 2-D grid)
GRID_ORACLE = {
    "logistic_zero": (0.5970554900281129, 0.24058023185560157),
    "logistic_power": (0.9900113613127832, 1.004882012149017),
    "log_ou_zero": (0.825753179187266, 0.5709747686446243),
    "log_ou_power": (1.48778758313274, 1.372559389007947),
    "mean_revert_half": (0.2746559111472453, 1.2494203344002908),
    "mean_revert_3q": (0.26248945102968707, 1.2498477924240194),
}


def make_model(name):
    kind, params, payoff = CATALOG[name]
    return build_catalog_model(kind, params, payoff=payoff)


@pytest.fixture(scope="session")
def models():
    return {k: make_model(k) for k in CATALOG}


@pytest.fixture(scope="session")
def solutions(models):
    return {k: solve_threshold(m) for k, m in models.items()}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
