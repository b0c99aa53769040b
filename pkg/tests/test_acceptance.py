"""One test per acceptance criterion at the quick tier; each prints its pass/fail line."""

import pytest

from pathreg import acceptance

LINES = []


@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    result = acceptance.run_criterion(number, "quick")
    line = result.line()
    LINES.append(line)
    print(line)
    assert result.passed, line
