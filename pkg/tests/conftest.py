import shutil
from importlib import resources
from pathlib import Path

import pytest

DATA = Path(str(resources.files("riskrank") / "data"))


def copy_bundle(dest: Path, name: str) -> Path:
    """Copy a bundled config with its data files into ``dest``; return the config path."""
    for f in DATA.iterdir():
        if f.suffix in (".jsonl", ".csv", ".cfg"):
            shutil.copy(f, dest / f.name)
    return dest / f"{name}.cfg"


@pytest.fixture
def toy_cfg(tmp_path) -> Path:
    return copy_bundle(tmp_path, "toy")


# criterion number -> (passed, detail); filled by the acceptance module
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
