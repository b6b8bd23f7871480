import datetime as dt

import pytest

from dwelltrack.model import SLOTS_PER_DAY, DayTrajectory, EncodedLocation

DATE = dt.date(2024, 3, 4)

# verdict lines recorded by the acceptance tests, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def day_of(slots, resident_id="r000", date=DATE):
    """Build a DayTrajectory from integer codes, padding with the last value."""
    codes = list(slots)
    if len(codes) < SLOTS_PER_DAY:
        codes = codes + [codes[-1]] * (SLOTS_PER_DAY - len(codes))
    return DayTrajectory(
        resident_id=resident_id,
        date=date,
        slots=tuple(EncodedLocation(c) for c in codes),
    )


def constant_day(code, resident_id="r000", date=DATE):
    return day_of([code] * SLOTS_PER_DAY, resident_id, date)


@pytest.fixture
def base_date():
    return DATE
