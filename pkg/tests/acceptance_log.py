"""Pass/fail lines collected by the acceptance module."""

LINES = []


def record(number, title, ok, detail):
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok
