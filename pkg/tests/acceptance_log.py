"""Collects one verdict line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS = {}


@contextmanager
def criterion(number, title, budget_s=None):
    start = time.perf_counter()
    line = f"AC{number} FAIL  {title}"
    RESULTS[number] = line
    notes = []
    try:
        yield notes
        elapsed = time.perf_counter() - start
        if budget_s is not None and elapsed >= budget_s:
            raise AssertionError(f"took {elapsed:.2f} s, budget {budget_s} s")
        line = f"AC{number} PASS  {title}"
    except BaseException as exc:
        notes.append(f"{type(exc).__name__}: {exc}".splitlines()[0])
        raise
    finally:
        elapsed = time.perf_counter() - start
        detail = "; ".join(notes)
        RESULTS[number] = f"{line}  ({elapsed:.2f} s{'; ' + detail if detail else ''})"
        print(RESULTS[number])
