"""Deterministic synthetic WAT corpora with exact expected counts.

The generator writes Common Crawl-shaped WAT files (one warcinfo record, then
a request and a response metadata record per page, one gzip member each) and
a manifest of the counts a correct scan must produce.  The manifest is built
by enumerating the plantings directly from their clean spellings; it never
calls the normalizer or the classifier.
"""
from __future__ import annotations

import gzip
import hashlib
import json
import random
import uuid
from base64 import b32encode
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from urllib.parse import urlsplit

from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList, SchemeClass

KINDS = ("actionable", "original-body", "head-meta", "head-link", "locating", "plain")
NONE = "(none)"
WARC_DATE = "2017-01-01T00:00:00Z"
CONTENT_TYPES = ("text/html", "text/html; charset=UTF-8", "application/xhtml+xml", None)
NOISE_WS = (" ", "\t", "\n", "\r\n", " ")


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class Planting:
    """``value`` written ``multiplicity`` times, once per entry of ``page_indices``.

    ``plain`` plantings are ordinary links with no PID meaning (decoys).
    ``locating`` plantings are links expected to hit a locating filter.
    """

    kind: str
    value: str
    multiplicity: int
    page_indices: tuple[int, ...]
    meta_name: str | None = None
    noisy: bool = True


@dataclass
class CorpusSpec:
    pages: int
    plantings: list[Planting] = field(default_factory=list)
    duplicate_pages: list[tuple[int, int]] = field(default_factory=list)
    seed: int = 0
    filler_links: int = 4

    def validate(self, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> None:
        if self.pages < 1:
            raise InvalidSpec("pages must be positive")
        copies = {}
        for src, dst in self.duplicate_pages:
            if not (0 <= src < self.pages and 0 <= dst < self.pages) or src == dst:
                raise InvalidSpec(f"bad duplicate pair ({src}, {dst})")
            if dst in copies:
                raise InvalidSpec(f"page {dst} duplicated twice")
            copies[dst] = src
        if any(src in copies for src in copies.values()):
            raise InvalidSpec("a duplicate's source is itself a duplicate")
        for p in self.plantings:
            if p.kind not in KINDS:
                raise InvalidSpec(f"unknown planting kind {p.kind!r}")
            if not p.value:
                raise InvalidSpec("empty planting value")
            if p.multiplicity < 1 or p.multiplicity != len(p.page_indices):
                raise InvalidSpec("multiplicity must equal the number of page indices")
            for i in p.page_indices:
                if not 0 <= i < self.pages:
                    raise InvalidSpec(f"page index {i} out of range")
                if i in copies:
                    raise InvalidSpec(f"page {i} is a duplicate and cannot carry plantings")
            if p.kind == "actionable" and (urlsplit(p.value).hostname or "") not in watch_list:
                raise InvalidSpec(f"actionable planting on a non-resolver host: {p.value}")
            if p.kind == "locating" and (urlsplit(p.value).port is not None or urlsplit(p.value).fragment):
                raise InvalidSpec("locating plantings must not carry a port or fragment")

    def to_json(self) -> dict:
        d = asdict(self)
        d["duplicate_pages"] = [list(x) for x in self.duplicate_pages]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CorpusSpec":
        plantings = [Planting(**{**p, "page_indices": tuple(p["page_indices"])}) for p in d.get("plantings", [])]
        return cls(d["pages"], plantings, [tuple(x) for x in d.get("duplicate_pages", [])],
                   d.get("seed", 0), d.get("filler_links", 4))


# ---------------------------------------------------------------- spellings

def _path_start(value: str) -> int:
    scheme, sep, rest = value.partition(":")
    if not sep:
        return 0
    if rest.startswith("//"):
        slash = rest.find("/", 2)
        return len(scheme) + 1 + (slash if slash >= 0 else len(rest))
    return len(scheme) + 1


def noisy_spelling(value: str, rng: random.Random, kind: str) -> str:
    """A messier string that normalizes to the same components as ``value``."""
    s = value
    start = _path_start(s)
    if kind == "actionable":
        scheme, _, rest = s.partition("://")
        host, slash, path = rest.partition("/")
        if rng.random() < 0.3:
            scheme, host = scheme.upper(), host.upper()
        s = f"{scheme}://{host}{slash}{path}"
        start = _path_start(s)
    if rng.random() < 0.5:
        spots = [i for i in range(start, len(s)) if s[i].isalnum()]
        if spots:
            i = rng.choice(spots)
            esc = f"%{ord(s[i]):02X}"
            s = s[:i] + (esc.lower() if rng.random() < 0.3 else esc) + s[i + 1:]
    if kind == "actionable" and rng.random() < 0.5:
        amp = rng.choice(["&amp;", "&#38;", "&#x26;", "&amp;amp;"])
        s += f"?utm_source=feed{rng.randrange(9)}{amp}ref=x"
    if rng.random() < 0.4:
        spots = [i for i, c in enumerate(s) if c in "/."]
        if spots:
            i = rng.choice(spots)
            s = s[:i] + f"&#{ord(s[i])};" + s[i + 1:]
    for _ in range(rng.choice([0, 1, 1, 2])):
        i = rng.randrange(len(s) + 1)
        s = s[:i] + rng.choice(NOISE_WS) + s[i:]
    return s


# ---------------------------------------------------------------- pages

@dataclass
class _Page:
    index: int
    target_uri: str
    content_type: str | None
    body: list[tuple[str, str, str]] = field(default_factory=list)  # (raw, kind, clean)
    head_links: list[tuple[str, str]] = field(default_factory=list)  # (raw href, clean)
    head_metas: list[tuple[str | None, str, str]] = field(default_factory=list)  # (name, raw, clean)
    digest: str = ""


def _filler(rng: random.Random, page: int, i: int) -> str:
    r = rng.random()
    if r < 0.6:
        return f"http://filler{rng.randrange(40)}.example.net/a/{page}/{i}"
    if r < 0.75:
        return f"https://cdn{rng.randrange(5)}.example.com/s/{i}.js"
    if r < 0.9:
        return f"/local/{page}/{i}.html"
    return f"mailto:someone{rng.randrange(7)}@example.org"


def _build_pages(spec: CorpusSpec) -> list[_Page]:
    rng = random.Random(spec.seed)
    pages = []
    for i in range(spec.pages):
        scheme = "https" if i % 3 == 0 else "http"
        pages.append(_Page(i, f"{scheme}://www.site{i % 50}.example/p/{i}.html",
                           CONTENT_TYPES[rng.randrange(len(CONTENT_TYPES))]))
    for page in pages:
        for j in range(rng.randrange(spec.filler_links + 1)):
            url = _filler(rng, page.index, j)
            page.body.append((url, "filler", url))
    for p in spec.plantings:
        for i in p.page_indices:
            raw = noisy_spelling(p.value, rng, p.kind) if p.noisy else p.value
            page = pages[i]
            if p.kind == "head-meta":
                page.head_metas.append((p.meta_name, raw, p.value))
            elif p.kind == "head-link":
                page.head_links.append((raw, p.value))
            else:
                page.body.append((raw, p.kind, p.value))
    for page in pages:
        rng.shuffle(page.body)
    for src, dst in spec.duplicate_pages:
        s, d = pages[src], pages[dst]
        d.content_type, d.body = s.content_type, list(s.body)
        d.head_links, d.head_metas = list(s.head_links), list(s.head_metas)
    for page in pages:
        content = json.dumps([page.body, page.head_links, page.head_metas], sort_keys=True)
        page.digest = "sha1:" + b32encode(hashlib.sha1(content.encode("utf-8")).digest()).decode("ascii")
    for src, dst in spec.duplicate_pages:
        pages[dst].digest = pages[src].digest
    return pages


# ---------------------------------------------------------------- WAT writing

def _record_id(rng: random.Random) -> str:
    return f"<urn:uuid:{uuid.UUID(int=rng.getrandbits(128), version=4)}>"


def _warc_record(headers: list[tuple[str, str]], body: bytes) -> bytes:
    head = "WARC/1.0\r\n" + "".join(f"{k}: {v}\r\n" for k, v in headers)
    head += f"Content-Length: {len(body)}\r\n\r\n"
    return gzip.compress(head.encode("utf-8") + body + b"\r\n\r\n", mtime=0)


def _envelope(page: _Page, warc_type: str, record_id: str) -> dict:
    header_meta = {
        "WARC-Type": warc_type,
        "WARC-Date": WARC_DATE,
        "WARC-Record-ID": record_id,
        "WARC-Target-URI": page.target_uri,
    }
    if warc_type == "request":
        return {
            "Container": {"Compressed": True},
            "Envelope": {
                "Format": "WARC",
                "WARC-Header-Metadata": header_meta,
                "Payload-Metadata": {
                    "Actual-Content-Type": "application/http; msgtype=request",
                    "HTTP-Request-Metadata": {
                        "Request-Message": {"Method": "GET", "Path": urlsplit(page.target_uri).path},
                        "Headers": {"Host": urlsplit(page.target_uri).hostname},
                    },
                },
            },
        }
    header_meta["WARC-Payload-Digest"] = page.digest
    headers = {"Server": "synthetic"}
    if page.content_type is not None:
        headers["Content-Type"] = page.content_type
    head: dict = {"Title": f"Page {page.index}"}
    if page.head_links:
        head["Link"] = [{"path": "LINK@/href", "url": raw, "rel": "alternate"} for raw, _ in page.head_links]
    if page.head_metas:
        head["Metas"] = [
            {"content": raw} if name is None else {"name": name, "content": raw}
            for name, raw, _ in page.head_metas
        ]
    return {
        "Container": {"Compressed": True},
        "Envelope": {
            "Format": "WARC",
            "WARC-Header-Metadata": header_meta,
            "Payload-Metadata": {
                "Actual-Content-Type": "application/http; msgtype=response",
                "HTTP-Response-Metadata": {
                    "Response-Message": {"Version": "HTTP/1.1", "Status": "200", "Reason": "OK"},
                    "Headers": headers,
                    "HTML-Metadata": {
                        "Head": head,
                        "Links": [{"path": "A@/href", "url": raw} for raw, _, _ in page.body],
                    },
                },
            },
        },
    }


def _shard_bytes(pages: list[_Page], rng: random.Random, shard: int) -> bytes:
    out = [_warc_record(
        [("WARC-Type", "warcinfo"), ("WARC-Date", WARC_DATE), ("WARC-Record-ID", _record_id(rng)),
         ("WARC-Filename", f"shard-{shard:05d}.warc.wat.gz"), ("Content-Type", "application/warc-fields")],
        b"software: pidscan-corpus\r\nformat: WAT\r\n",
    )]
    for page in pages:
        for warc_type in ("request", "response"):
            rid = _record_id(rng)
            body = json.dumps(_envelope(page, warc_type, rid), separators=(",", ":")).encode("utf-8")
            out.append(_warc_record(
                [("WARC-Type", "metadata"), ("WARC-Target-URI", page.target_uri), ("WARC-Date", WARC_DATE),
                 ("WARC-Record-ID", _record_id(rng)), ("WARC-Refers-To", rid),
                 ("Content-Type", "application/json")],
                body,
            ))
    return b"".join(out)


# ---------------------------------------------------------------- manifest

def _scheme_host(clean: str) -> tuple[str, str]:
    parts = urlsplit(clean)
    scheme = parts.scheme.lower() if ":" in clean.split("/", 1)[0] else NONE
    return scheme or NONE, (parts.hostname or NONE)


def _pid_key(clean: str, kind: str, watch_list: ResolverWatchList) -> str:
    if kind == "actionable":
        parts = urlsplit(clean)
        cls = watch_list.scheme_class(parts.hostname)
        pid = parts.path[1:]
    elif clean.startswith("doi:"):
        cls, pid = SchemeClass.DOI, clean[4:]
    elif clean.startswith("info:hdl/"):
        cls, pid = SchemeClass.HANDLE, clean[len("info:hdl/"):]
    elif clean.startswith("info:doi/"):
        cls, pid = SchemeClass.DOI, clean[len("info:doi/"):]
    else:
        raise InvalidSpec(f"not an original-form PID: {clean}")
    if cls == SchemeClass.DOI:
        prefix, slash, suffix = pid.partition("/")
        pid = prefix.lower() + slash + suffix
    return f"{cls.value} {pid}"


class _Table:
    def __init__(self):
        self.t: dict[str, list[int]] = defaultdict(lambda: [0, 0])

    def page(self, counts: Counter) -> None:
        for k, n in counts.items():
            self.t[k][0] += n
            self.t[k][1] += 1

    def json(self) -> dict[str, list[int]]:
        return {k: list(self.t[k]) for k in sorted(self.t)}


def expected_manifest(spec: CorpusSpec, pages: list[_Page] | None = None, shards: int = 1,
                      watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> dict:
    pages = pages if pages is not None else _build_pages(spec)
    names = ["crawled_scheme_table", "host_table", "content_type_table", "link_scheme_table",
             "link_host_table", "resolver_table", "pid_table", "original_table", "original_form_table",
             "meta_name_table"]
    tables = {n: _Table() for n in names}
    locating = _Table()
    for page in pages:
        scheme, host = _scheme_host(page.target_uri)
        tables["crawled_scheme_table"].page(Counter([scheme]))
        tables["host_table"].page(Counter([host]))
        tables["content_type_table"].page(Counter([page.content_type or NONE]))
        per = {n: Counter() for n in names}
        loc = Counter()
        for _, kind, clean in page.body:
            scheme, host = _scheme_host(clean)
            per["link_scheme_table"][scheme] += 1
            per["link_host_table"][host] += 1
            if kind == "actionable":
                per["resolver_table"][host] += 1
                per["pid_table"][_pid_key(clean, kind, watch_list)] += 1
            elif kind == "original-body":
                per["original_table"][_pid_key(clean, kind, watch_list)] += 1
                per["original_form_table"]["body_links"] += 1
            elif kind == "locating":
                parts = urlsplit(clean)
                key = f"{parts.scheme.lower()}://{parts.hostname}{parts.path}"
                loc[key + ("?" + parts.query if parts.query else "")] += 1
        per["original_form_table"]["head_links"] += len(page.head_links)
        for name, _, _ in page.head_metas:
            per["original_form_table"]["head_metas"] += 1
            per["meta_name_table"][name if name is not None else ""] += 1
        for n in names[3:]:
            tables[n].page(+per[n])
        locating.page(loc)
    n_shards = max(1, min(shards, spec.pages))
    return {
        "pages": len(pages),
        "tables": {n: t.json() for n, t in tables.items()},
        "locating_table": locating.json(),
        "record_kinds": {"request": len(pages), "response": len(pages), "warcinfo": n_shards},
        "error_tallies": {},
        "digests": sorted({p.digest for p in pages}),
        "target_uris": sorted({p.target_uri for p in pages}),
    }


def split_pages(n: int, shards: int) -> list[range]:
    shards = max(1, min(shards, n))
    bounds = [n * i // shards for i in range(shards + 1)]
    return [range(bounds[i], bounds[i + 1]) for i in range(shards)]


def generate_corpus(spec: CorpusSpec, out_dir: str | Path, shards: int = 1, prefix: str = "CC-SYNTH",
                    watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> tuple[list[Path], dict]:
    """Write ``shards`` WAT files plus ``manifest.json``; return the paths and the manifest."""
    spec.validate(watch_list)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pages = _build_pages(spec)
    rng = random.Random(spec.seed ^ 0x5EED)
    paths = []
    for k, rows in enumerate(split_pages(spec.pages, shards)):
        path = out / f"{prefix}-{k:05d}.warc.wat.gz"
        path.write_bytes(_shard_bytes([pages[i] for i in rows], rng, k))
        paths.append(path)
    manifest = expected_manifest(spec, pages, shards, watch_list)
    manifest["spec"] = spec.to_json()
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return paths, manifest


# ---------------------------------------------------------------- stock specs

ACTIONABLE_TEMPLATES = (
    "https://doi.org/10.{r}/j.test.{n}",
    "http://dx.doi.org/10.{r}/ABC-{n}",
    "https://dx.medra.org/10.{r}/medra.{n}",
    "http://hdl.handle.net/{r}.1000/{n}",
    "https://n2t.net/ark:/{r}3030/q{n}",
)
META_NAMES = ("citation_doi", "dc.identifier", "dc.Identifier", "DC.identifier", "prism.doi", None)


def mixed_corpus_spec(pages: int = 1000, seed: int = 7, actionable: int = 300, originals: int = 60,
                      head_metas: int = 40, head_links: int = 15, duplicates: int = 20) -> CorpusSpec:
    """A corpus touching every resolver host, every original form and every noise kind."""
    rng = random.Random(seed)
    dsts = rng.sample(range(pages), duplicates)
    taken = set(dsts)
    free = [i for i in range(pages) if i not in taken]
    srcs = rng.sample(free, duplicates)
    pool = [ACTIONABLE_TEMPLATES[k % 5].format(r=1000 + k % 7, n=k) for k in range(150)]
    plantings = []

    def pick(m: int) -> tuple[int, ...]:
        return tuple(rng.choice(free) for _ in range(m))

    for k in range(actionable):
        value = pool[k] if k < len(pool) else rng.choice(pool)
        m = rng.choice([1, 1, 1, 2, 3])
        plantings.append(Planting("actionable", value, m, pick(m)))
    for k in range(originals):
        value = rng.choice([f"doi:10.{2000 + k % 5}/orig.{k}", f"info:hdl/20.500/{k}", f"info:doi/10.55/{k}"])
        plantings.append(Planting("original-body", value, 1, pick(1)))
    for k in range(head_metas):
        plantings.append(Planting("head-meta", f"doi:10.{3000 + k % 3}/meta.{k}", 1, pick(1),
                                  meta_name=META_NAMES[k % len(META_NAMES)]))
    for k in range(head_links):
        plantings.append(Planting("head-link", f"doi:10.4000/link.{k}", 1, pick(1)))
    return CorpusSpec(pages, plantings, list(zip(srcs, dsts)), seed)
