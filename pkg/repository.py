from __future__ import annotations

from abc import ABC
from typing import Callable, Generic, Iterable, TypeVar

T = TypeVar("T")


class Repository(Generic[T], ABC):
    """
    Base repository over an in-memory collection of records.

    Subclasses narrow the collection with `select` and expose domain
    specific queries on top of `where`.
    """

    def __init__(self, items: Iterable[T]) -> None:
        self.items = list(items)

    def select(self) -> list[T]:
        return list(self.items)

    def where(self, predicate: Callable[[T], bool]) -> list[T]:
        return [item for item in self.select() if predicate(item)]

    def __len__(self) -> int:
        return len(self.select())
