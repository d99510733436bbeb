"""Show what the two extractors recover from a question/SQL pair."""

import argparse
import json

from stef import extract_question_spec, extract_sql_spec
from stef.errors import UnsupportedConstruct

DEFAULT_QUESTION = "Total spend per year and country for China in 2023"
DEFAULT_SQL = (
    "SELECT Year, Country, SUM(Spend) AS TotalSpend FROM spend_table "
    "WHERE Country ILIKE 'China' AND Year = 2023 "
    "GROUP BY Year, Country ORDER BY SUM(Spend) DESC LIMIT 20000"
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--question", default=DEFAULT_QUESTION)
    ap.add_argument("--enriched", default=None)
    ap.add_argument("--sql", default=DEFAULT_SQL)
    args = ap.parse_args()

    qspec = extract_question_spec(args.question, args.enriched)
    print("question-side spec:")
    print(json.dumps(qspec.to_dict(), indent=2, sort_keys=True))

    try:
        spec = extract_sql_spec(args.sql)
    except UnsupportedConstruct as exc:
        print(f"sql uses an unsupported construct ({exc.construct}); "
              "the pipeline would hand this straight to the judge")
        return
    print("sql-side spec:")
    print(json.dumps(spec.to_dict(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
