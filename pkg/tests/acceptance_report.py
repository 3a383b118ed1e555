"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
RESULTS = []


def record(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok
