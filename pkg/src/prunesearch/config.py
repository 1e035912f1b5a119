"""Loading search configurations from JSON files.

File references (network, benchmark, latency model, lookup rows) are resolved
relative to the config file and inlined, so the resulting ``SearchConfig``
(and its fingerprint) depends only on content.

Layout::

    {
      "network": "net.json" | {...},
      "reward": {"alpha": 0.1, "latency_budget_ms": 100},
      "kernel": {"h": 2, "normalize": true, "signal_variance": 1.0, "noise": 1e-6},
      "controller": {"pool_size": 200, "random_fraction": 0.1},
      "search": {"batch_size": 8, "max_evaluations": 64, "init_random_evaluations": 16, "seed": 0},
      "evaluator": {"kind": "simulated", "benchmark": "bench.json", "latency_model": "lat.json"}
    }

Lookup evaluators take ``"rows"`` (a path or a list); external evaluators take
``"command"`` (a list of strings) and optional ``"timeout"`` in seconds.
``PRUNESEARCH_SEED`` overrides ``search.seed``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping

from .network import ConfigurationError
from .search import SearchConfig

SEED_ENV = "PRUNESEARCH_SEED"
OUT_DIR_ENV = "PRUNESEARCH_OUT_DIR"


def _inline(value, base: Path):
    if isinstance(value, str):
        path = base / value
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigurationError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path} is not valid JSON: {e}") from e
    return value


def resolve(raw: Mapping, base: Path) -> dict:
    d = json.loads(json.dumps(raw))
    d["network"] = _inline(d.get("network"), base)
    ev = d.get("evaluator")
    if not isinstance(ev, Mapping) or "kind" not in ev:
        raise ConfigurationError("config needs an 'evaluator' section with a 'kind'")
    if ev["kind"] == "simulated":
        ev["benchmark"] = _inline(ev.get("benchmark"), base)
        ev["latency_model"] = _inline(ev.get("latency_model"), base)
    elif ev["kind"] == "lookup":
        rows = _inline(ev.get("rows"), base)
        ev["rows"] = rows["rows"] if isinstance(rows, Mapping) else rows
    elif ev["kind"] == "external":
        ev.setdefault("cwd", str(base.resolve()))
    return d


def load_config(path, seed: int = None) -> SearchConfig:
    """Read, resolve and validate a config file; ``seed`` beats the env var."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config {path} is not valid JSON: {e}") from e
    d = resolve(raw, path.parent)
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer") from None
    if seed is not None:
        d.setdefault("search", {})["seed"] = seed
    try:
        return SearchConfig.from_dict(d)
    except ConfigurationError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid config {path}: {e!r}") from e
