"""Collects acceptance sub-check outcomes so one line per criterion can be printed."""

from collections import OrderedDict

RESULTS: "OrderedDict[int, list[tuple[str, bool, str]]]" = OrderedDict()


def record(criterion: int, name: str, ok: bool, detail: str = "") -> bool:
    RESULTS.setdefault(criterion, []).append((name, bool(ok), detail))
    print(f"  [{criterion}] {name}: {'ok' if ok else 'FAILED'} {detail}".rstrip())
    return bool(ok)


def criterion_lines() -> list[str]:
    lines = []
    for crit in sorted(RESULTS):
        checks = RESULTS[crit]
        ok = all(c[1] for c in checks)
        failed = [c[0] for c in checks if not c[1]]
        tail = "" if ok else f" (failed: {', '.join(failed)})"
        lines.append(f"criterion {crit}: {'PASS' if ok else 'FAIL'} [{len(checks)} checks]{tail}")
    return lines
