import numpy as np
import pytest
import structlog

import pocco
from pocco import ModelConfig, ProblemType, TrainConfig
from pocco.nn import Policy


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical and training checks")


@pytest.fixture(autouse=True)
def _reset_structlog():
    # setup_logging binds the current sys.stderr globally; drop it so a closed capture stream does not leak across tests
    yield
    structlog.reset_defaults()


TINY_MODEL = ModelConfig(embed_dim=8, n_encoder_layers=1, n_heads=2, n_ff_experts=2, topk=2, ff_hidden=16)


@pytest.fixture
def tiny_model():
    return TINY_MODEL


@pytest.fixture
def tsp_policy():
    return Policy(TINY_MODEL, ProblemType.motsp, 2, seed=11)


@pytest.fixture
def tsp_instance():
    return pocco.generate(ProblemType.motsp, 6, 2, 21)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        problem="MOTSP",
        n=5,
        kappa=2,
        batch_size=2,
        samples_per_subproblem=3,
        steps=2,
        seed=5,
        validate_every=1,
        validation_size=2,
        validation_H=2,
        variance_batches=2,
        model=TINY_MODEL,
    )
