"""Per-page tabulation into mergeable shard summaries."""
from __future__ import annotations

import gzip
import hashlib
import io
import json
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple

from .dedup import DEFAULT_PRECISION, HllSketch, IncompatibleSketchParams
from .pids import Form, MembershipFilter, Source, classify, scan_head_link, scan_head_meta
from .uri import NO_HOST, host_of, normalize, scheme_of
from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList

SCHEMA = "pidscan.shard-summary"
SCHEMA_VERSION = 1
NONE_KEY = "(none)"


class Counts(NamedTuple):
    tokens: int
    docs: int


class FrequencyTable:
    """key -> (tokens, docs).  ``len()`` is the type count."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, Iterable[int]] | None = None):
        self._entries: dict[str, list[int]] = {}
        if entries:
            for key, (tokens, docs) in entries.items():
                self.add(key, tokens, docs)

    def add(self, key: str, tokens: int = 1, docs: int = 1) -> None:
        if tokens < 0 or docs < 0 or docs > tokens:
            raise ValueError(f"bad counts for {key!r}: tokens={tokens} docs={docs}")
        e = self._entries.get(key)
        if e is None:
            self._entries[key] = [tokens, docs]
        else:
            e[0] += tokens
            e[1] += docs

    def add_page(self, occurrences: Mapping[str, int]) -> None:
        """Add one page's token counts; each key gains one document."""
        for key, n in occurrences.items():
            self.add(key, n, 1)

    def update(self, other: "FrequencyTable") -> "FrequencyTable":
        for key, (tokens, docs) in other._entries.items():
            self.add(key, tokens, docs)
        return self

    def __add__(self, other: "FrequencyTable") -> "FrequencyTable":
        return self.copy().update(other)

    def copy(self) -> "FrequencyTable":
        new = FrequencyTable()
        new._entries = {k: list(v) for k, v in self._entries.items()}
        return new

    def __getitem__(self, key: str) -> Counts:
        e = self._entries.get(key)
        return Counts(*e) if e else Counts(0, 0)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterator[tuple[str, Counts]]:
        for key, e in self._entries.items():
            yield key, Counts(*e)

    def keys(self) -> set[str]:
        return set(self._entries)

    @property
    def tokens(self) -> int:
        return sum(e[0] for e in self._entries.values())

    @property
    def docs(self) -> int:
        return sum(e[1] for e in self._entries.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FrequencyTable) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"FrequencyTable({len(self)} keys, {self.tokens} tokens)"

    def to_json(self) -> dict[str, list[int]]:
        return {k: list(self._entries[k]) for k in sorted(self._entries)}

    @classmethod
    def from_json(cls, d: Mapping[str, list[int]]) -> "FrequencyTable":
        return cls({k: tuple(v) for k, v in d.items()})


TABLE_NAMES = (
    "crawled_scheme_table",
    "host_table",
    "content_type_table",
    "link_scheme_table",
    "link_host_table",
    "resolver_table",
    "pid_table",
    "original_table",
    "original_form_table",
    "meta_name_table",
)


def watch_list_id(watch_list: ResolverWatchList) -> str:
    return hashlib.sha1(watch_list.dumps().encode("utf-8")).hexdigest()[:16]


@dataclass
class ShardSummary:
    """Every counter produced by scanning one WAT file (or a merge of several)."""

    hll_precision: int = DEFAULT_PRECISION
    hll_seed: int = 0
    watch_list_id: str = field(default_factory=lambda: watch_list_id(DEFAULT_WATCH_LIST))
    pages: int = 0
    crawled_scheme_table: FrequencyTable = field(default_factory=FrequencyTable)
    host_table: FrequencyTable = field(default_factory=FrequencyTable)
    content_type_table: FrequencyTable = field(default_factory=FrequencyTable)
    link_scheme_table: FrequencyTable = field(default_factory=FrequencyTable)
    link_host_table: FrequencyTable = field(default_factory=FrequencyTable)
    resolver_table: FrequencyTable = field(default_factory=FrequencyTable)
    pid_table: FrequencyTable = field(default_factory=FrequencyTable)
    original_table: FrequencyTable = field(default_factory=FrequencyTable)
    original_form_table: FrequencyTable = field(default_factory=FrequencyTable)
    meta_name_table: FrequencyTable = field(default_factory=FrequencyTable)
    locating_table: FrequencyTable | None = None
    error_tallies: Counter = field(default_factory=Counter)
    record_kinds: Counter = field(default_factory=Counter)
    proxy_digest_pages: int = 0
    page_digest_sketch: HllSketch | None = None
    uri_sketch: HllSketch | None = None

    def __post_init__(self):
        if self.page_digest_sketch is None:
            self.page_digest_sketch = HllSketch(self.hll_precision, self.hll_seed)
        if self.uri_sketch is None:
            self.uri_sketch = HllSketch(self.hll_precision, self.hll_seed)
        self.error_tallies = Counter(self.error_tallies)
        self.record_kinds = Counter(self.record_kinds)

    @classmethod
    def empty(cls, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST, hll_precision: int = DEFAULT_PRECISION,
              hll_seed: int = 0, with_locating: bool = False) -> "ShardSummary":
        return cls(
            hll_precision=hll_precision,
            hll_seed=hll_seed,
            watch_list_id=watch_list_id(watch_list),
            locating_table=FrequencyTable() if with_locating else None,
        )

    @property
    def original_form_counts(self) -> dict[str, int]:
        return {s.value: self.original_form_table[s.value].tokens for s in Source}

    @property
    def link_total(self) -> int:
        return self.link_scheme_table.tokens

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ShardSummary):
            return NotImplemented
        # Counter equality ignores zero entries on 3.10+; compare without them
        return all(
            _clean(getattr(self, f.name)) == _clean(getattr(other, f.name)) for f in fields(self)
        )

    def copy(self) -> "ShardSummary":
        return ShardSummary.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "params": {
                "hll_precision": self.hll_precision,
                "hll_seed": self.hll_seed,
                "watch_list_id": self.watch_list_id,
            },
            "pages": self.pages,
            "proxy_digest_pages": self.proxy_digest_pages,
            "tables": {name: getattr(self, name).to_json() for name in TABLE_NAMES},
            "locating_table": None if self.locating_table is None else self.locating_table.to_json(),
            "error_tallies": {k: v for k, v in sorted(self.error_tallies.items()) if v},
            "record_kinds": {k: v for k, v in sorted(self.record_kinds.items()) if v},
            "sketches": {
                "page_digest": self.page_digest_sketch.to_dict(),
                "uri": self.uri_sketch.to_dict(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShardSummary":
        params = d["params"]
        loc = d.get("locating_table")
        return cls(
            hll_precision=params["hll_precision"],
            hll_seed=params["hll_seed"],
            watch_list_id=params["watch_list_id"],
            pages=d["pages"],
            proxy_digest_pages=d.get("proxy_digest_pages", 0),
            locating_table=None if loc is None else FrequencyTable.from_json(loc),
            error_tallies=Counter(d.get("error_tallies", {})),
            record_kinds=Counter(d.get("record_kinds", {})),
            page_digest_sketch=HllSketch.from_dict(d["sketches"]["page_digest"]),
            uri_sketch=HllSketch.from_dict(d["sketches"]["uri"]),
            **{name: FrequencyTable.from_json(d["tables"][name]) for name in TABLE_NAMES},
        )

    def to_bytes(self, release_id: str = "") -> bytes:
        doc = {"schema": SCHEMA, "version": SCHEMA_VERSION, "release_id": release_id, **self.to_dict()}
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(text.encode("utf-8"))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["ShardSummary", str]:
        doc = json.loads(gzip.decompress(data))
        if doc.get("schema") != SCHEMA:
            raise ValueError("not a shard summary document")
        if doc.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported summary version {doc.get('version')}")
        return cls.from_dict(doc), doc.get("release_id", "")

    def save(self, path: str | Path, release_id: str = "") -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes(release_id))
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "ShardSummary":
        return cls.from_bytes(Path(path).read_bytes())[0]


def _clean(value):
    if isinstance(value, Counter):
        return {k: v for k, v in value.items() if v}
    return value


def merge(a: ShardSummary, b: ShardSummary) -> ShardSummary:
    """Sum every counter and take the register-wise max of the sketches."""
    if (a.hll_precision, a.hll_seed) != (b.hll_precision, b.hll_seed):
        raise IncompatibleSketchParams(
            f"sketch params differ: p={a.hll_precision}/seed={a.hll_seed} vs p={b.hll_precision}/seed={b.hll_seed}"
        )
    if a.watch_list_id != b.watch_list_id:
        raise ValueError("summaries were built with different resolver watch-lists")
    if a.locating_table is None and b.locating_table is None:
        locating = None
    else:
        locating = (a.locating_table or FrequencyTable()) + (b.locating_table or FrequencyTable())
    return ShardSummary(
        hll_precision=a.hll_precision,
        hll_seed=a.hll_seed,
        watch_list_id=a.watch_list_id,
        pages=a.pages + b.pages,
        proxy_digest_pages=a.proxy_digest_pages + b.proxy_digest_pages,
        locating_table=locating,
        error_tallies=a.error_tallies + b.error_tallies,
        record_kinds=a.record_kinds + b.record_kinds,
        page_digest_sketch=a.page_digest_sketch.merge(b.page_digest_sketch),
        uri_sketch=a.uri_sketch.merge(b.uri_sketch),
        **{name: getattr(a, name) + getattr(b, name) for name in TABLE_NAMES},
    )


def merge_all(summaries: Iterable[ShardSummary], start: ShardSummary | None = None) -> ShardSummary:
    result = start
    for s in summaries:
        result = s.copy() if result is None else merge(result, s)
    if result is None:
        raise ValueError("nothing to merge")
    return result


def tabulate_page(
    summary: ShardSummary,
    envelope,
    watch_list: ResolverWatchList = DEFAULT_WATCH_LIST,
    locating_filter: MembershipFilter | None = None,
) -> None:
    """Fold one response envelope into ``summary`` in place."""
    summary.pages += 1
    target = normalize(envelope.target_uri, watch_list)
    summary.crawled_scheme_table.add(scheme_of(target))
    summary.host_table.add(host_of(target))
    summary.content_type_table.add(envelope.content_type if envelope.content_type is not None else NONE_KEY)
    if envelope.malformed_links:
        summary.error_tallies["malformed_link"] += envelope.malformed_links

    schemes: Counter = Counter()
    hosts: Counter = Counter()
    resolvers: Counter = Counter()
    pids: Counter = Counter()
    originals: Counter = Counter()
    forms: Counter = Counter()
    locating: Counter = Counter()
    metas: Counter = Counter()

    for link in envelope.body_links:
        uri = normalize(link.url, watch_list)
        if uri.degenerate:
            summary.error_tallies["degenerate_uri"] += 1
        schemes[scheme_of(uri)] += 1
        hosts[uri.host if uri.host else NO_HOST] += 1
        obs = classify(uri, Source.BODY_LINK, locating_filter, watch_list)
        if obs is None:
            if _looks_empty_pid(uri, watch_list):
                summary.error_tallies["empty_pid"] += 1
            continue
        if obs.form == Form.ACTIONABLE:
            resolvers[obs.resolver_host] += 1
            pids[obs.key] += 1
        elif obs.form == Form.ORIGINAL:
            originals[obs.key] += 1
            forms[Source.BODY_LINK.value] += 1
        else:
            locating[obs.pid] += 1

    for entry in envelope.head_links:
        if scan_head_link(entry, watch_list) is not None:
            forms[Source.HEAD_LINK.value] += 1
    for entry in envelope.head_metas:
        obs = scan_head_meta(entry, watch_list)
        if obs is not None:
            forms[Source.HEAD_META.value] += 1
            metas[obs.meta_name if obs.meta_name is not None else NONE_KEY] += 1

    summary.link_scheme_table.add_page(schemes)
    summary.link_host_table.add_page(hosts)
    summary.resolver_table.add_page(resolvers)
    summary.pid_table.add_page(pids)
    summary.original_table.add_page(originals)
    summary.original_form_table.add_page(forms)
    summary.meta_name_table.add_page(metas)
    if locating_filter is not None:
        if summary.locating_table is None:
            summary.locating_table = FrequencyTable()
        summary.locating_table.add_page(locating)

    digest, is_proxy = envelope.digest
    summary.page_digest_sketch.add(digest)
    if is_proxy:
        summary.proxy_digest_pages += 1
    summary.uri_sketch.add(envelope.target_uri)


def _looks_empty_pid(uri, watch_list) -> bool:
    return uri.host is not None and uri.host in watch_list and uri.path.strip("/") == ""


@dataclass(frozen=True)
class Overlap:
    both: int
    only_a: int
    only_b: int
    # (not a, not b) is empty by construction
    neither: int = 0


def overlap(a: Iterable[str], b: Iterable[str]) -> Overlap:
    sa, sb = set(a), set(b)
    both = len(sa & sb)
    return Overlap(both, len(sa) - both, len(sb) - both)
