import os
from pathlib import Path

import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_num_threads(1)

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


def write_tiny_experiment(root: Path, **settings_) -> Path:
    """Small corpora, test files and a float64 config; returns the config path."""
    from canto_umt.synthetic import make_dialect_pair

    pair = make_dialect_pair(n_train=60, n_test=4, seed=0)
    files = {"l1.txt": pair.l1_train, "l2.txt": pair.l2_train, "test_l1.txt": pair.test_l1, "test_l2.txt": pair.test_l2}
    for name, lines in files.items():
        (root / name).write_text("".join(s + "\n" for s in lines), encoding="utf-8")
    conf = {
        "seed": 1, "l1_corpus": "l1.txt", "l2_corpus": "l2.txt", "test_l1": "test_l1.txt", "test_l2": "test_l2.txt",
        "embed_route": "concat", "embed_epochs": 1, "d_model": 16, "heads": 2, "ffn_dim": 16,
        "max_len": 40, "dtype": "float64", "steps": 12, "batch_size": 4, "warmup_frac": 0.5,
    }
    conf.update(settings_)
    path = root / "exp.conf"
    path.write_text("".join(f"{k} = {v}\n" for k, v in conf.items()), encoding="utf-8")
    return path


@pytest.fixture
def tiny_experiment(tmp_path) -> Path:
    return write_tiny_experiment(tmp_path)
