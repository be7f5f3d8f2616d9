import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=30,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, description, measured)
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(n, passed, description, measured=""):
        ACCEPTANCE[n] = (bool(passed), description, measured)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, measured = ACCEPTANCE[n]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {desc}"
        if measured:
            line += f" ({measured})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    from animgan.toy import make_toy_corpus

    return make_toy_corpus(2, 8, 12, seed=3)


@pytest.fixture(scope="session")
def small_codec(small_corpus):
    from animgan.codec import CodecConfig, train_autoencoder

    poses = np.concatenate([m.rotations for m in small_corpus])
    model, _ = train_autoencoder(poses, CodecConfig(lr=3e-3, epochs=30, dropout=0.0))
    return model
