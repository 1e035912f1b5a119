import json
import sys
from pathlib import Path

import numpy as np
import pytest

from prunesearch import LayerSpec, NetworkSpec
from prunesearch.search import EvaluatorSpec

FIXTURES = Path(__file__).parent / "fixtures"
MOCK = FIXTURES / "mock_evaluator.py"


def chain(n, skippable=True, kinds=("conv3x3", "conv1x1", "dwconv"), name=None, **kw):
    layers = [
        LayerSpec(f"l{i}", kinds[i % len(kinds)], 1_000_000 * (i + 1), 1000 * (i + 1),
                  skippable=skippable, **kw)
        for i in range(n)
    ]
    return NetworkSpec(name or f"chain{n}", tuple(layers))


def mock_spec(*extra, timeout=10.0) -> EvaluatorSpec:
    return EvaluatorSpec(
        "external",
        {"command": [sys.executable, str(MOCK), *extra], "timeout": timeout, "cwd": None},
    )


def write_config(tmp_path, problem, max_evaluations, **search):
    """Write a problem to JSON files and return the config path."""
    net = tmp_path / "network.json"
    net.write_text(json.dumps(problem.network.to_dict()))
    ev = dict(problem.evaluator.to_dict())
    if ev["kind"] == "simulated":
        (tmp_path / "bench.json").write_text(json.dumps(ev["benchmark"]))
        (tmp_path / "latency.json").write_text(json.dumps(ev["latency_model"]))
        ev["benchmark"], ev["latency_model"] = "bench.json", "latency.json"
    elif ev["kind"] == "lookup":
        (tmp_path / "rows.json").write_text(json.dumps({"rows": ev["rows"]}))
        ev["rows"] = "rows.json"
    cfg = {
        "network": "network.json",
        "reward": problem.reward.to_dict(),
        "kernel": {"h": 2, "normalize": True, "signal_variance": 1.0, "noise": 1e-6},
        "controller": {"pool_size": 50, "random_fraction": 0.1},
        "search": {"max_evaluations": max_evaluations, **search},
        "evaluator": ev,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter, config):
    from test_acceptance import ACCEPTANCE_KEY
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
