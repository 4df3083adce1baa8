"""Shared paths and subprocess helpers for driving the detector CLI."""

import pathlib
import subprocess
import sys

import pytest

REPO_ROOT = pathlib.Path(__file__).resolve().parents[2]


def firewall_cli(*args, expect_code=0):
    """Invoke the detection package strictly through its CLI."""
    result = subprocess.run(
        [sys.executable, "-m", "ibdpsc.cli", *[str(a) for a in args]],
        capture_output=True,
        text=True,
    )
    assert result.returncode == expect_code, result.stderr or result.stdout
    return result.stdout


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("forge-artifacts")
