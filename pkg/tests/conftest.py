import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from asap.driver import RunConfig
from asap.environment import RewardTableEnvironment
from asap.rewards import AlphaSchedule


def table_config(rewards, init_estimates=None, horizon=6, beta=0.5, seed=0, **kw):
    """Run config over a canned reward table.

    Constant alpha = 1 makes the observed combined reward equal the table
    entry (the alignment term is zero for the table environment).
    """
    env = RewardTableEnvironment(rewards, init_estimates=init_estimates)
    return RunConfig(
        horizon=horizon,
        environment=env,
        beta=beta,
        alpha_schedule=AlphaSchedule(kind="constant", alpha0=1.0),
        seed=seed,
        **kw,
    )


@pytest.fixture
def tmp_trace(tmp_path):
    return tmp_path / "trace.csv"
