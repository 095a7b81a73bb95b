import os
import sys

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=_criterion_order):
        terminalreporter.write_line(line)


def _criterion_order(line):
    label = line.split("criterion ", 1)[1].split(" ", 1)[0]
    digits = "".join(ch for ch in label if ch.isdigit())
    return int(digits), label
