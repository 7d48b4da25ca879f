"""Resolver watch-list: which hosts serve actionable PID forms."""
from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping


class SchemeClass(str, Enum):
    DOI = "DOI"
    HANDLE = "Handle"
    OTHER = "Other"


class ResolverWatchList:
    """Immutable host -> scheme class mapping.

    Hosts are matched lowercased and port-free.
    """

    def __init__(self, entries: Iterable[tuple[str, SchemeClass]] | Mapping[str, SchemeClass]):
        if isinstance(entries, Mapping):
            entries = entries.items()
        table: dict[str, SchemeClass] = {}
        for host, cls in entries:
            host = host.strip().lower()
            if not host:
                raise ValueError("empty resolver host")
            if host in table:
                raise ValueError(f"duplicate resolver host: {host}")
            table[host] = SchemeClass(cls)
        self._table = table
        self.hosts = frozenset(table)

    def __contains__(self, host: object) -> bool:
        return host in self._table

    def __iter__(self):
        return iter(self._table.items())

    def __len__(self) -> int:
        return len(self._table)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ResolverWatchList) and self._table == other._table

    def __hash__(self) -> int:
        return hash(frozenset(self._table.items()))

    def __repr__(self) -> str:
        return f"ResolverWatchList({self._table!r})"

    def scheme_class(self, host: str) -> SchemeClass:
        return self._table[host]

    def canonical_host(self, cls: SchemeClass) -> str:
        """First-listed host for a class; used to rebuild one actionable URI per PID."""
        for host, c in self._table.items():
            if c == cls:
                return host
        raise KeyError(cls)

    def dumps(self) -> str:
        return "".join(f"{host}\t{cls.value}\n" for host, cls in self._table.items())

    @classmethod
    def loads(cls, text: str) -> "ResolverWatchList":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"watch-list line {lineno}: expected 'host<TAB>class'")
            entries.append((parts[0], SchemeClass(parts[1].strip())))
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "ResolverWatchList":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# First host per class is the canonical one used when re-resolving PIDs.
DEFAULT_WATCH_LIST = ResolverWatchList(
    [
        ("doi.org", SchemeClass.DOI),
        ("dx.doi.org", SchemeClass.DOI),
        ("dx.medra.org", SchemeClass.DOI),
        ("hdl.handle.net", SchemeClass.HANDLE),
        ("n2t.net", SchemeClass.OTHER),
    ]
)
