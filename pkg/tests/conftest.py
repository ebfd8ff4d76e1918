import pytest

from counterevasion.core import Feature, FeatureSchema, Interval, CONTINUOUS
from counterevasion.dtree import build_tree

BENIGN, MALICIOUS = 0, 1


def example_schema() -> FeatureSchema:
    """X1..X18, continuous, domain [-10, 100]."""
    return FeatureSchema(tuple(Feature(f"X{i}", CONTINUOUS, Interval.closed(-10, 100)) for i in range(1, 19)))


def example_tree():
    """Hand-encoded 15-node tree; node ids are arena indices.

    v0: X9<=13 -> v10 | v12
    v10: X4<=0 -> v9 | v4(mal)
    v9: X9<=7 -> v1(mal) | v8
    v8: X16<=9.1 -> v7 | v6(mal)
    v7: X18<=2.3 -> v2(mal) | v3(ben)
    v12: X10<=5 -> v11 | v5(mal)
    v11: X1<=4 -> v14(mal) | v13(ben)
    """
    inner = {
        0: ("X9", 13, 10, 12),
        10: ("X4", 0, 9, 4),
        9: ("X9", 7, 1, 8),
        8: ("X16", 9.1, 7, 6),
        7: ("X18", 2.3, 2, 3),
        12: ("X10", 5, 11, 5),
        11: ("X1", 4, 14, 13),
    }
    benign = {3, 13}
    records = []
    for i in range(15):
        if i in inner:
            f, t, l, r = inner[i]
            records.append({"id": i, "feature": f, "threshold": t, "left": l, "right": r})
        else:
            records.append({"id": i, "label": BENIGN if i in benign else MALICIOUS})
    return build_tree(example_schema(), records)


def example_vector(**values) -> list[float]:
    x = [0.0] * 18
    for name, v in values.items():
        x[int(name[1:]) - 1] = v
    return x


@pytest.fixture
def schema18():
    return example_schema()


@pytest.fixture
def tree15():
    return example_tree()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
