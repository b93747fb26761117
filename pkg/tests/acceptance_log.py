"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(number, passed: bool, seconds: float, budget: float, detail: str) -> bool:
    ok = passed and seconds < budget
    timing = f"{seconds:.1f}s of {budget:g}s"
    LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail} | {timing}")
    print(LINES[-1])
    return ok
