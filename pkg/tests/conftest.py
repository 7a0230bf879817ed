import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vaefqa.synthetic import face_blobs  # noqa: E402
from vaefqa.train import TrainConfig, train  # noqa: E402
from vaefqa.vae import ArchDescriptor, VaeModel  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_arch():
    return ArchDescriptor.fc(input_side=16, latent_dim=8, hidden=(64,))


@pytest.fixture(scope="session")
def toy_data():
    return face_blobs(1000, side=16, seed=11).reshape(1000, -1)


@pytest.fixture(scope="session")
def toy_model(toy_arch, toy_data):
    """Small FC VAE trained briefly on clean blobs; shared, treat as read-only."""
    model = VaeModel.initialize(toy_arch, seed=3)
    cfg = TrainConfig(learning_rate=0.005, batch_size=100, epochs=8, seed=5)
    trained, _ = train(model, toy_data, cfg)
    return trained


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
