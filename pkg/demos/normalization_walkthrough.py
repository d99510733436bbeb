"""Walk the four production-SQL idioms through the normalizer.

Each query below is flagged by naive structural comparison; the rules
mark every construct as exempt so none of them costs points.
"""

from stef import extract_question_spec, extract_sql_spec
from stef.normalize import DEFAULT_CONFIG, apply_all

QUESTION = "Total spend per year and country for China"

QUERIES = {
    "mixed select needs GROUP BY": (
        "SELECT Year, Country, SUM(Spend) AS TotalSpend FROM spend_table "
        "WHERE Country ILIKE 'China' GROUP BY Year, Country"),
    "grouping a pinned column is inert": (
        "SELECT Country, SUM(Spend) AS TotalSpend FROM spend_table "
        "WHERE Country ILIKE 'China' GROUP BY Country"),
    "default ordering on the aggregate": (
        "SELECT Year, Country, SUM(Spend) AS TotalSpend FROM spend_table "
        "WHERE Country ILIKE 'China' GROUP BY Year, Country "
        "ORDER BY SUM(Spend) DESC"),
    "all four idioms at once": (
        "SELECT Year, Country, SUM(Spend) AS TotalSpend FROM spend_table "
        "WHERE Country ILIKE 'China' GROUP BY Year, Country "
        "ORDER BY SUM(Spend) DESC LIMIT 20000"),
    "LIMIT 5 without a top-k ask": (
        "SELECT Year, Country, SUM(Spend) AS TotalSpend FROM spend_table "
        "WHERE Country ILIKE 'China' GROUP BY Year, Country LIMIT 5"),
}


def main():
    qspec = extract_question_spec(QUESTION)
    for label, sql in QUERIES.items():
        annotations = apply_all(qspec, extract_sql_spec(sql), DEFAULT_CONFIG)
        print(f"-- {label}")
        if not annotations:
            print("   (nothing fired)")
        for a in annotations:
            mark = "exempt" if a.exempt else "FLAGGED"
            print(f"   {a.rule_id.value:20s} {mark:7s} {a.target}: {a.note}")
        print()


if __name__ == "__main__":
    main()
