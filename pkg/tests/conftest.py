"""Shared acceptance-criteria registry and end-of-run summary."""

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for idx in sorted(ACCEPTANCE):
        status, label = ACCEPTANCE[idx]
        terminalreporter.write_line(f"criterion {idx:2d}: {status}  {label}")
