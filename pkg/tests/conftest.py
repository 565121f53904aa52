import time

import pytest
from hypothesis import settings

from covertsim import avatars, experiments

settings.register_profile("repo", derandomize=True, deadline=None)
settings.load_profile("repo")

DESK_IDENTITIES = 200
DESK_EPOCHS = 2


@pytest.fixture(scope="session")
def small_corpus():
    return avatars.generate_corpus(avatars.CorpusSpec(6, seed=7))


@pytest.fixture(scope="session")
def desk():
    """Siamese model trained once per session at 64x64 on 200 identities."""
    start = time.perf_counter()
    trained = experiments.train_desk_model(DESK_IDENTITIES, DESK_EPOCHS, input_size=64, seed=0)
    trained.train_seconds = time.perf_counter() - start
    return trained


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
