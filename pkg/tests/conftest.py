import numpy as np
import pytest
import torch

from coseg.data import SyntheticSpec, make_synthetic, split_store

torch.set_num_threads(1)

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_synthetic(tmp_path_factory):
    """32 px, 24 frames per domain, split 80/10/10."""
    root = tmp_path_factory.mktemp("tiny_synth")
    spec = SyntheticSpec(n_frames=24, image_size=32)
    a, b = make_synthetic(spec, root, seed=3)
    a_tr, a_va, a_te = split_store(a)
    b_tr, b_va, b_te = split_store(b)
    return {"root": root, "spec": spec, "a": a, "b": b,
            "a_train": a_tr, "a_val": a_va, "a_test": a_te,
            "b_train": b_tr, "b_val": b_va, "b_test": b_te}
