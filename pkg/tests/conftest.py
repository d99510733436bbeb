import pytest

from stef.model import AppRules, FilterOp, FilterTriple

# The four production patterns the normalization rules were built around,
# shared across extractor, normalizer, aligner, and acceptance tests.

SQL_REQUIRED_GROUP_BY = (
    "SELECT Year, Country, SUM(Spend) AS TotalSpend "
    "FROM spend_table WHERE Country ILIKE 'China' GROUP BY Year, Country"
)

SQL_BENIGN_GROUP_BY = (
    "SELECT Country, SUM(Spend) AS TotalSpend "
    "FROM spend_table WHERE Country ILIKE 'China' GROUP BY Country"
)

SQL_SENSIBLE_ORDER = SQL_REQUIRED_GROUP_BY + " ORDER BY SUM(Spend) DESC"

SQL_SAFETY_LIMIT = SQL_SENSIBLE_ORDER + " LIMIT 20000"


@pytest.fixture
def spend_rules():
    """Rules profile shaped like a real supply-chain deployment."""
    return AppRules(
        column_mappings={"region": "regionname", "spend": "totalspendusd",
                         "customer": "customeraccountid"},
        benign_filters=frozenset({
            FilterTriple("status", FilterOp.EQ, "active"),
            FilterTriple("is_deleted", FilterOp.EQ, 0),
        }),
        ignore_filters=frozenset({"portfolio", "tenantid"}),
    )
