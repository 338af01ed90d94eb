import pytest

from hstl.config import RunConfig


def small_config(**changes) -> RunConfig:
    """A 6x6 two-region patrol that trains in well under a second."""
    base = RunConfig(
        formula="G[0,inf)(F[0,8) psiA & F[0,8) psiB)",
        aliases={
            "psiA": "(x > 0) & (x < 2) & (y > 3) & (y < 5)",
            "psiB": "(x > 3) & (x < 5) & (y > 0) & (y < 2)",
        },
        width=6,
        height=6,
        option_set_mode="all-permutations",
        episodes=4,
        option_choices_per_episode=15,
        step_cap=25,
        seed=3,
    )
    return base.replace(**changes) if changes else base


@pytest.fixture
def small():
    return small_config()


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
