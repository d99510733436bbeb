"""Generate a small evaluation batch, run it offline, print the summary.

Writes demo_batch.jsonl next to this script, scores it with the stub
judge, and leaves the .scored.jsonl / .summary.json files behind for
inspection. One record is deliberately malformed to show isolation.
"""

import json
import os
import sys

from stef.cli import main as stef_main

HERE = os.path.dirname(os.path.abspath(__file__))
BATCH = os.path.join(HERE, "demo_batch.jsonl")

SQL_OK = ("SELECT Year, Country, SUM(Spend) AS TotalSpend FROM spend_table "
          "WHERE Country ILIKE 'China' GROUP BY Year, Country "
          "ORDER BY SUM(Spend) DESC LIMIT 20000")
SQL_MISSING_YEAR = ("SELECT Country, SUM(Spend) FROM spend_table "
                    "WHERE Country ILIKE 'China' GROUP BY Country")
SQL_WINDOWED = "SELECT Country, SUM(Spend) OVER () FROM spend_table"

RECORDS = [
    {"id": "perfect", "question": "Total spend per year and country for China",
     "sql": SQL_OK},
    {"id": "dropped-year",
     "question": "Total spend per country for China in 2023",
     "sql": SQL_MISSING_YEAR},
    {"id": "window-function", "question": "Total spend per country",
     "sql": SQL_WINDOWED},
]


def main():
    with open(BATCH, "w", encoding="utf-8") as fh:
        for rec in RECORDS:
            fh.write(json.dumps(rec) + "\n")
        fh.write("{broken json\n")

    code = stef_main(["eval", "--input", BATCH, "--parallelism", "2"])
    print(f"\nexit code: {code} (2 means at least one record failed)")

    scored = BATCH.replace(".jsonl", ".scored.jsonl")
    print(f"\nper-record results from {os.path.basename(scored)}:")
    with open(scored, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            if "error" in row:
                print(f"  {row['id']:18s} ERROR {row['error']['type']}")
            else:
                print(f"  {row['id']:18s} phi={row['score']['phi']:<7} "
                      f"mode={row['mode']} verdict={row['judge']['verdict']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
