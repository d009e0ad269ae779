import json
import os

import pytest


def small_run_config(out, **sections):
    """A config that runs every command in seconds: 7 classes, 300 features, 5 epochs."""
    cfg = {
        "synth": {"recordings_per_class": 4, "samples_per_recording": 400},
        "signal": {"window_len": 200},
        "data": {"manifest": str(out / "dataset" / "manifest.json")},
        "features": {"pca_k": 16},
        "model": {"d_model": 16, "d_ff": 32, "n_heads": 2},
        "train": {"epochs": 5, "batch_size": 8, "learning_rate": 1e-3},
    }
    for name, values in sections.items():
        if isinstance(values, dict):
            cfg.setdefault(name, {}).update(values)
        else:
            cfg[name] = values
    return cfg


@pytest.fixture
def write_config(tmp_path):
    def _write(out, name="config.json", **sections):
        path = tmp_path / name
        path.write_text(json.dumps(small_run_config(out, **sections)))
        return path
    return _write


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    # config overrides from the developer's shell must not leak into tests
    for key in list(os.environ):
        if key.startswith("T4PDM_"):
            monkeypatch.delenv(key)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; lines are printed and repeated in the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def _record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
        lines.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
