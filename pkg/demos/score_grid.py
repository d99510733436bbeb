"""Print the full composite-score grid.

Rows are filter-status / verdict pairs, columns are confidence levels,
one grid without the leniency point and one with it.
"""

from stef import composite
from stef.model import FilterStatus, Tier, Verdict

GAMMAS = [1.0, 0.85, 0.84, 0.65, 0.64, 0.30]


def grid(benign):
    head = "status/verdict".ljust(52) + "".join(f"g={g:<6}" for g in GAMMAS)
    print(head)
    print("-" * len(head))
    for status in FilterStatus:
        for verdict in Verdict:
            cells = []
            for gamma in GAMMAS:
                b = composite(status, benign, verdict, gamma)
                cells.append(f"{b.phi:<8.2f}")
            label = f"{status.value} / {verdict.value}"
            print(label.ljust(52) + "".join(cells))
    print()


def main():
    print("without leniency (extras not all benign):\n")
    grid(False)
    print("with leniency (every extra filter is a known default):\n")
    grid(True)
    print("tier cut points:", ", ".join(
        f"{t.value}" for t in Tier), "at 90 / 75 / 50")


if __name__ == "__main__":
    main()
