"""Activity label set and label-space helpers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

# The 18 office activity classes, in canonical (alphabetical) order.
# Index i of this tuple is the canonical class index.
FPV_O_CLASSES: tuple[str, ...] = (
    "chat",
    "clean",
    "drink",
    "dryer",
    "machine",
    "microwave",
    "mobile",
    "paper",
    "print",
    "read",
    "shake",
    "staple",
    "take",
    "typeset",
    "walk",
    "wash",
    "whiteboard",
    "write",
)


@dataclass(frozen=True)
class ActivityLabel:
    name: str
    index: int

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("label name must be nonempty")
        if self.index < 0:
            raise ValueError("label index must be nonnegative")


class LabelSpace:
    """Ordered, immutable bijection between class names and indices 0..N-1."""

    def __init__(self, names: Sequence[str]):
        names = tuple(names)
        if not names:
            raise ValueError("label space needs at least one class")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names in {names!r}")
        self._names = names
        self._index = {n: i for i, n in enumerate(names)}

    @classmethod
    def fpv_o(cls) -> "LabelSpace":
        """The full 18-class space."""
        return cls(FPV_O_CLASSES)

    @classmethod
    def first(cls, n: int) -> "LabelSpace":
        """The first n canonical classes; used by the synthetic generator."""
        if not 1 <= n <= len(FPV_O_CLASSES):
            raise ValueError(f"n must be in 1..{len(FPV_O_CLASSES)}, got {n}")
        return cls(FPV_O_CLASSES[:n])

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown class {name!r}") from None

    def label(self, name: str) -> ActivityLabel:
        return ActivityLabel(name, self.index_of(name))

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __getitem__(self, index: int) -> str:
        return self._names[index]

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelSpace):
            return NotImplemented
        return self._names == other._names

    def __hash__(self) -> int:
        return hash(self._names)

    def __repr__(self) -> str:
        return f"LabelSpace({list(self._names)!r})"
