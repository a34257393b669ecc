import pytest
import torch

from polyglot_probe.model import ModelConfig, init_model
from polyglot_probe.tokenize import default_specs, gen_synthetic_languages

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def lexicon():
    return gen_synthetic_languages(default_specs(2, concepts=12, seed=3))


@pytest.fixture(scope="session")
def tiny_model(lexicon):
    cfg = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=len(lexicon.vocab),
                      max_seq_len=64, seed=1)
    return init_model(cfg)


ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = ("PASS" if passed else "FAIL", detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status} - {detail}")
