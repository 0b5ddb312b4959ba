"""Shared pytest plumbing: one summary line per acceptance criterion."""
import re

import pytest

_NOTES: dict[str, str] = {}
_WORD = {"passed": "PASS", "failed": "FAIL", "error": "FAIL", "skipped": "SKIP"}


@pytest.fixture
def note(request):
    """Stash a short measurement string for this test's summary line."""

    def _note(msg):
        _NOTES[request.node.nodeid] = str(msg)

    return _note


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    entries = {}
    for key in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)(\w*)", nodeid)
            if m is None:
                continue
            tag = (int(m.group(1)), m.group(2))
            # a call-phase report wins over the setup-phase skip entry
            if tag in entries and getattr(rep, "when", "call") != "call":
                continue
            entries[tag] = (_WORD[key], nodeid, getattr(rep, "when", "call"))
    if not entries:
        return
    terminalreporter.section("acceptance criteria")
    for (num, suffix), (word, nodeid, _) in sorted(entries.items()):
        label = f"criterion {num:02d}{suffix.replace('_', ' ')}"
        detail = _NOTES.get(nodeid, "")
        terminalreporter.write_line(f"  {label:<32} {word:<4} {detail}")
