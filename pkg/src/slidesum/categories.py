"""The three frame-volume categories and their fixed class indices."""

from __future__ import annotations

from enum import IntEnum


class Category(IntEnum):
    """Classification target for a frame volume.

    The integer values double as class indices in probability vectors,
    confusion matrices, and category-weight arrays, so their order is part
    of every on-disk and in-memory contract.
    """

    UNCHANGED = 0
    SWITCH = 1
    TRANSITION = 2

    @classmethod
    def from_name(cls, name: str) -> "Category":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown category name: {name!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


NUM_CATEGORIES = len(Category)
