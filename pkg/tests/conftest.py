import os

# keep sweeps reproducible and avoid oversubscribing BLAS threads inside workers
os.environ.setdefault("OCSLAB_THREADS", "4")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import criterion_lines

    lines = criterion_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
