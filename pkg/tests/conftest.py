def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line acceptance verdicts printed by the tests."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "") == "call":
                lines += [l for l in rep.capstdout.splitlines() if l.startswith("criterion ")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
