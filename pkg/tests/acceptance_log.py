"""Pass/fail lines collected by the acceptance tests, printed in the pytest summary."""

LINES: list[str] = []
