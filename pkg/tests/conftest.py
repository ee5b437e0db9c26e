"""Shared pytest plumbing: the acceptance-criteria result board.

Acceptance tests record one line per criterion; the lines are echoed both
at record time (visible with -s) and in the terminal summary (always
visible), so a plain `pytest -v` run shows an explicit pass/fail line for
every criterion.
"""

ACCEPTANCE_RESULTS: list[str] = []


def record_criterion(num: int, description: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"[criterion {num:2d}] {status}: {description}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
