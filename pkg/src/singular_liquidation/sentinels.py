"""The ``INF`` sentinel standing in for +infinity in terminal values and costs."""

from __future__ import annotations


class Infinity:
    """Singleton marker for +infinity.

    Formulas branch on ``x is INF`` explicitly instead of letting a float
    ``inf`` travel through arithmetic, where ``inf * 0`` or ``inf - inf``
    would silently become NaN.
    """

    _instance: "Infinity | None" = None

    def __new__(cls) -> "Infinity":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INF"

    def __reduce__(self):
        return (Infinity, ())

    def __ge__(self, other) -> bool:
        return True

    def __gt__(self, other) -> bool:
        return other is not self

    def __le__(self, other) -> bool:
        return other is self

    def __lt__(self, other) -> bool:
        return False


INF = Infinity()
#: Truncation marker of a singular-limit value surface.
LIMIT = INF


def is_inf(x) -> bool:
    return x is INF


def parse_extended(value):
    """Map config spellings of infinity (``inf``, ``.inf``, ``+inf``) to ``INF``."""
    if value is INF:
        return INF
    if isinstance(value, str):
        if value.strip().lower() in {"inf", "+inf", "infinity", "+infinity", ".inf"}:
            return INF
        raise ValueError(f"not a number or infinity: {value!r}")
    value = float(value)
    if value == float("inf"):
        return INF
    return value


def to_jsonable(value):
    return "inf" if value is INF else value
