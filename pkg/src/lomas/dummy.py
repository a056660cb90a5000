"""Seeded synthetic datasets that satisfy a metadata document exactly.

The generator is pinned to splitmix64, a named portable 64-bit PRNG, with a
column-major draw order (all rows of column 0, then all rows of column 1,
...), so the dataset a client sees is a pure function of
(metadata, nb_rows, seed) on every platform and in every implementation
that follows the same recipe.
"""

from __future__ import annotations

import math

from .dataset import Dataset
from .metadata import ColumnKind, DatasetMetadata

_MASK64 = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53

DEFAULT_DUMMY_ROWS = 100
DEFAULT_DUMMY_SEED = 42


class SplitMix64:
    """splitmix64 stream; uniform doubles use the top 53 bits."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_uint64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_uint64() >> 11) * _INV_2_53


def _draw_column(rng: SplitMix64, column, nb_rows: int) -> list:
    values: list = []
    if column.kind is ColumnKind.INTEGER:
        lower, upper = int(column.lower), int(column.upper)
        span = upper - lower + 1
        for _ in range(nb_rows):
            values.append(lower + math.floor(rng.random() * span))
    elif column.kind is ColumnKind.REAL:
        lower, upper = column.lower, column.upper
        width = upper - lower
        for _ in range(nb_rows):
            values.append(lower + rng.random() * width)
    elif column.kind is ColumnKind.CATEGORICAL:
        cats = column.categories
        n = len(cats)
        for _ in range(nb_rows):
            values.append(cats[math.floor(rng.random() * n)])
    else:  # boolean
        for _ in range(nb_rows):
            values.append(rng.random() >= 0.5)
    return values


def generate_dummy(metadata: DatasetMetadata, nb_rows: int, seed: int) -> Dataset:
    """Produce nb_rows of schema-conforming synthetic data.

    Numeric columns are uniform over their inclusive ranges, categoricals
    uniform over the declared categories, booleans uniform over
    {false, true}. Marginals only; no inter-column correlation.
    """
    if not isinstance(nb_rows, int) or isinstance(nb_rows, bool) or nb_rows < 0:
        raise ValueError("nb_rows must be a non-negative integer")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValueError("seed must be an integer")
    rng = SplitMix64(seed)
    columns = [_draw_column(rng, col, nb_rows) for col in metadata.columns]
    rows = [tuple(col[i] for col in columns) for i in range(nb_rows)]
    return Dataset(columns=metadata.column_names, rows=rows)
