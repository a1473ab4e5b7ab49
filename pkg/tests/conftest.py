import pytest

from symptom_bench.simulator import SimConfig, build_dataset

TINY_SIM = dict(
    seed=0,
    window_len=40,
    n_train_windows=32,
    n_val_windows=8,
    n_test_per_fault=3,
    causal={"min_duration": 20, "max_duration": 40, "b_delay": 4},
    fault3_shift=8,
)
TINY_ARCH = {"channels": [4, 4], "kernel_size": 3, "dilations": [1, 2]}


@pytest.fixture(scope="session")
def tiny_dataset():
    return build_dataset(SimConfig(**TINY_SIM))


# acceptance verdicts, printed as one line each at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, ok: bool, summary: str) -> bool:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {summary}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
