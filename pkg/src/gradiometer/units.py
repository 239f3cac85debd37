"""Conversions from the lab's customary units to SI."""

import math

MICRO = 1e-6
MILLI = 1e-3

uT = MICRO  # tesla
mT = MILLI
mA = MILLI  # ampere
uA = MICRO
mrad = MILLI  # radian
urad = MICRO
GHz = 1e9
ms = MILLI


def deg(value: float) -> float:
    return math.radians(value)


def percent(value: float) -> float:
    """Percent to fraction."""
    return value / 100.0
