import pytest

from recmem.encoder import Encoder, EncoderConfig
from recmem.engine import EngineConfig, RecMemEngine
from recmem.fixtures import GOLDEN_THETA_SIM
from recmem.subconscious import ConsolidationConfig

_CRITERIA: list[tuple[int, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        n, title = marker.args
        _CRITERIA.append((n, title, rep.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, outcome in sorted(_CRITERIA):
        status = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}")


@pytest.fixture
def encoder():
    return Encoder(EncoderConfig(dim=256))


@pytest.fixture
def golden_config():
    return EngineConfig(consolidation=ConsolidationConfig(theta_sim=GOLDEN_THETA_SIM, theta_count=2))


@pytest.fixture
def make_engine():
    def make(theta_sim=0.5, theta_count=5, mode="recurrence", conversation_id="c", **kw):
        cfg = EngineConfig(consolidation=ConsolidationConfig(theta_sim, theta_count), mode=mode, **kw)
        return RecMemEngine(cfg, conversation_id)

    return make
