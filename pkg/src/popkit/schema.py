"""State schemas and state vectors.

Cells are ordered row-major over the schema axes in declaration order: the
last axis varies fastest. Every matrix and vector in the package uses this
ordering.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import SchemaError, StateError


@dataclass(frozen=True)
class Axis:
    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(level) for level in self.levels))
        if not self.name:
            raise SchemaError("axis name must be non-empty")
        if not self.levels:
            raise SchemaError(f"axis {self.name!r} has no levels")
        if any(level == "" for level in self.levels):
            raise SchemaError(f"axis {self.name!r} has an unlabeled level")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"axis {self.name!r} has duplicate levels")

    def __len__(self):
        return len(self.levels)

    def index(self, level) -> int:
        try:
            return self.levels.index(str(level))
        except ValueError:
            raise SchemaError(f"axis {self.name!r} has no level {level!r}") from None


@dataclass(frozen=True)
class StateSchema:
    """Ordered categorical axes (age, stage, region, sex, ...).

    >>> s = StateSchema.from_dict({"region": ["a", "b"], "age": ["0", "1"]})
    >>> s.size, s.cell_labels(1)
    (4, {'region': 'a', 'age': '1'})
    """

    axes: tuple[Axis, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not self.axes:
            raise SchemaError("schema needs at least one axis")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate axis names in {names}")

    @classmethod
    def from_dict(cls, axes: Mapping[str, Sequence]) -> "StateSchema":
        return cls(tuple(Axis(name, tuple(levels)) for name, levels in axes.items()))

    def to_dict(self) -> dict:
        return {a.name: list(a.levels) for a in self.axes}

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    def axis(self, name: str) -> Axis:
        for a in self.axes:
            if a.name == name:
                return a
        raise SchemaError(f"schema has no axis {name!r}")

    def axis_position(self, name: str) -> int:
        return self.names.index(self.axis(name).name)

    def cell_index(self, labels: Mapping[str, str]) -> int:
        missing = set(self.names) - set(labels)
        if missing:
            raise SchemaError(f"cell labels missing axes {sorted(missing)}")
        idx = tuple(a.index(labels[a.name]) for a in self.axes)
        return int(np.ravel_multi_index(idx, self.shape))

    def cell_labels(self, cell: int) -> dict[str, str]:
        if not 0 <= cell < self.size:
            raise SchemaError(f"cell {cell} out of range for schema of size {self.size}")
        idx = np.unravel_index(cell, self.shape)
        return {a.name: a.levels[i] for a, i in zip(self.axes, idx)}

    def cell_name(self, cell: int) -> str:
        return "|".join(f"{k}={v}" for k, v in self.cell_labels(cell).items())

    def cell_names(self) -> list[str]:
        return [self.cell_name(c) for c in range(self.size)]

    def select(self, selector: Mapping | None = None) -> list[int]:
        """Indices of cells matching ``selector`` (axis -> level or list of levels).

        An empty or missing selector matches every cell.
        """
        selector = selector or {}
        allowed = []
        for a in self.axes:
            want = selector.get(a.name)
            if want is None:
                allowed.append(range(len(a)))
                continue
            if isinstance(want, (str, int)):
                want = [want]
            allowed.append(sorted(a.index(w) for w in want))
        unknown = set(selector) - set(self.names)
        if unknown:
            raise SchemaError(f"selector references unknown axes {sorted(unknown)}")
        return [int(np.ravel_multi_index(idx, self.shape)) for idx in itertools.product(*allowed)]

    def shift(self, cell: int, axis: str, level) -> int:
        """The cell sharing ``cell``'s labels except on ``axis``."""
        labels = self.cell_labels(cell)
        labels[axis] = str(level)
        return self.cell_index(labels)

    def same_labels(self, cell: int, axes: Sequence[str]) -> list[int]:
        """Cells that agree with ``cell`` on each of ``axes``."""
        labels = self.cell_labels(cell)
        return self.select({a: labels[a] for a in axes})


@dataclass
class StateVector:
    """Counts per cell at year ``t`` after process ``k`` (``k=0`` is the start of year)."""

    schema: StateSchema
    values: np.ndarray
    t: int = 0
    k: int = 0
    integer: bool = True
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        dtype = np.int64 if self.integer else np.float64
        raw = np.asarray(self.values)
        if self.integer and raw.size and not np.all(np.mod(raw, 1) == 0):
            raise StateError("integer-mode state has non-integral entries")
        self.values = raw.astype(dtype)
        check_state(self.values, self.schema.size, self.integer)

    def __len__(self):
        return self.values.shape[-1]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.schema.cell_names(), self.values.tolist()))


def check_state(values: np.ndarray, size: int, integer: bool | None = None) -> None:
    """Validate a state array of shape ``(..., size)``."""
    values = np.asarray(values)
    if values.shape[-1:] != (size,):
        raise SchemaError(f"state has {values.shape[-1:]} cells, schema expects {size}")
    if np.issubdtype(values.dtype, np.floating) and not np.all(np.isfinite(values)):
        raise StateError("state has non-finite entries")
    if np.any(values < 0):
        raise StateError("state has negative entries")
    if integer and np.issubdtype(values.dtype, np.floating) and np.any(np.mod(values, 1) != 0):
        raise StateError("integer-mode state has non-integral entries")
