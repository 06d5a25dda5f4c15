import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS  # noqa: E402
from slm_bmpc.experiment import ExperimentConfig, build_setup  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def gain_cache(tmp_path_factory):
    return str(tmp_path_factory.mktemp("gains"))


@pytest.fixture(scope="session")
def default_setup(gain_cache):
    cfg = ExperimentConfig().replace(run={"cache_dir": gain_cache})
    return build_setup(cfg)
