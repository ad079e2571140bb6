"""Collects one verdict per acceptance criterion for the terminal summary."""

TITLES = {
    1: "oracle dominance",
    2: "brute-force equivalence",
    3: "mask guarantees",
    4: "differentiability",
    5: "heuristic ordering",
    6: "assignment study",
    7: "toy RL convergence",
    8: "guidance mixing",
    9: "billing arithmetic",
    10: "determinism",
}
RESULTS: dict = {}


def report(number: int, passed: bool, detail: str) -> None:
    RESULTS[number] = (bool(passed), detail)


def summary_lines() -> list:
    lines = []
    for n, title in TITLES.items():
        if n in RESULTS:
            passed, detail = RESULTS[n]
            lines.append(f"[{'PASS' if passed else 'FAIL'}] {n:2d} {title}: {detail}")
        else:
            lines.append(f"[----] {n:2d} {title}: not run or raised before reporting")
    return lines
