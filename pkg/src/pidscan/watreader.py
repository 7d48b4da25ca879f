"""Streaming reader for WAT archives (gzip-compressed WARC with JSON payloads).

Only ``response`` envelopes matter downstream; everything else is yielded so
callers can tally it by kind.  Gzip decoding is done member by member with
:mod:`zlib` so that concatenated members (one per record in Common Crawl
shards) are read to the end and a truncated tail is reported rather than
raised.
"""
from __future__ import annotations

import hashlib
import json
import re
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Iterator

CHUNK_SIZE = 1 << 16
OUTPUT_LIMIT = 1 << 20
_GZIP_MAGIC = b"\x1f\x8b"
_SNIFF_BYTES = 8192
_WAT_TYPE_RE = re.compile(rb'"WARC-Header-Metadata"\s*:\s*\{[^{}]*?"WARC-Type"\s*:\s*"([A-Za-z-]+)"')

RESPONSE_PATH = ("Envelope", "Payload-Metadata", "HTTP-Response-Metadata")


class RecordKind(str, Enum):
    WARCINFO = "warcinfo"
    REQUEST = "request"
    RESPONSE = "response"
    OTHER = "metadata-other"


class ErrorKind(str, Enum):
    CORRUPT_GZIP = "corrupt_gzip"
    MALFORMED_RECORD_HEADER = "malformed_record_header"
    UNPARSEABLE_JSON = "unparseable_json"
    MISSING_TARGET_URI = "missing_target_uri"
    MALFORMED_LINK = "malformed_link"


@dataclass(frozen=True)
class WatRecord:
    record_kind: RecordKind
    payload: bytes
    byte_offset: int
    headers: dict[str, str] = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class ArchiveError:
    """An unreadable stretch of an archive; yielded in place of a record."""

    kind: ErrorKind
    byte_offset: int
    detail: str = ""


@dataclass(frozen=True)
class LinkEntry:
    path: str
    url: str


@dataclass(frozen=True)
class HeadLinkEntry:
    rel: str | None
    href: str | None


@dataclass(frozen=True)
class HeadMetaEntry:
    name: str | None
    content: str | None


@dataclass
class PageEnvelope:
    target_uri: str
    content_type: str | None = None
    body_links: list[LinkEntry] = field(default_factory=list)
    head_links: list[HeadLinkEntry] = field(default_factory=list)
    head_metas: list[HeadMetaEntry] = field(default_factory=list)
    payload_digest: str | None = None
    proxy_digest: str = ""
    malformed_links: int = 0

    @property
    def digest(self) -> tuple[str, bool]:
        """Content digest for duplicate estimation, and whether it is a proxy."""
        if self.payload_digest:
            return self.payload_digest, False
        return self.proxy_digest, True


class EnvelopeError(ValueError):
    kind: ErrorKind


class UnparseableJson(EnvelopeError):
    kind = ErrorKind.UNPARSEABLE_JSON


class MissingTargetUri(EnvelopeError):
    kind = ErrorKind.MISSING_TARGET_URI


class _Truncated(Exception):
    pass


class _CorruptGzip(Exception):
    def __init__(self, offset: int, detail: str):
        super().__init__(detail)
        self.offset = offset


def _gunzip_chunks(source: IO[bytes]) -> Iterator[bytes]:
    """Decompress a possibly multi-member gzip stream.

    Raises :class:`_Truncated` after yielding everything decodable when the
    stream ends inside a member, :class:`_CorruptGzip` on bad data.
    """
    decomp = None
    consumed = 0
    data = b""
    while True:
        if not data:
            data = source.read(CHUNK_SIZE)
            if not data:
                break
        if decomp is None:
            # tolerate zero padding between members
            data = data.lstrip(b"\x00")
            if not data:
                continue
            decomp = zlib.decompressobj(zlib.MAX_WBITS | 16)
        try:
            out = decomp.decompress(data, OUTPUT_LIMIT)
        except zlib.error as exc:
            raise _CorruptGzip(consumed, str(exc)) from None
        if out:
            yield out
        if decomp.eof:
            rest = decomp.unused_data
            consumed += len(data) - len(rest)
            decomp = None
            data = rest
        else:
            tail = decomp.unconsumed_tail
            consumed += len(data) - len(tail)
            data = tail
    if decomp is not None:
        out = decomp.flush()
        if out:
            yield out
        if not decomp.eof:
            raise _Truncated()


def _plain_chunks(source: IO[bytes], head: bytes) -> Iterator[bytes]:
    if head:
        yield head
    while True:
        data = source.read(CHUNK_SIZE)
        if not data:
            return
        yield data


class _ByteReader:
    """readline/read over a chunk iterator, tracking the decompressed offset."""

    def __init__(self, chunks: Iterator[bytes]):
        self._chunks = chunks
        self._buf = bytearray()
        self._pos = 0
        self.offset = 0
        self.truncated = False
        self.corrupt: _CorruptGzip | None = None
        self._done = False

    def _fill(self) -> bool:
        if self._done:
            return False
        try:
            chunk = next(self._chunks)
        except StopIteration:
            self._done = True
            return False
        except _Truncated:
            self.truncated = True
            self._done = True
            return False
        except _CorruptGzip as exc:
            self.corrupt = exc
            self._done = True
            return False
        if self._pos:
            del self._buf[: self._pos]
            self._pos = 0
        self._buf += chunk
        return True

    def readline(self) -> bytes:
        while True:
            idx = self._buf.find(b"\n", self._pos)
            if idx >= 0:
                line = bytes(self._buf[self._pos: idx + 1])
                self._pos = idx + 1
                self.offset += len(line)
                return line
            if not self._fill():
                line = bytes(self._buf[self._pos:])
                self._pos = len(self._buf)
                self.offset += len(line)
                return line

    def read(self, n: int) -> bytes:
        parts = []
        need = n
        while need:
            avail = len(self._buf) - self._pos
            if avail:
                take = min(avail, need)
                parts.append(bytes(self._buf[self._pos: self._pos + take]))
                self._pos += take
                need -= take
                continue
            if not self._fill():
                break
        data = b"".join(parts)
        self.offset += len(data)
        return data


def _kind_of(warc_type: str, payload: bytes) -> RecordKind:
    warc_type = warc_type.lower()
    if warc_type == "warcinfo":
        return RecordKind.WARCINFO
    if warc_type in ("request", "response"):
        return RecordKind(warc_type)
    if warc_type == "metadata":
        # WAT wraps each WARC record in a metadata record; the wrapped type
        # sits near the top of the JSON envelope.
        m = _WAT_TYPE_RE.search(payload, 0, _SNIFF_BYTES)
        if m:
            inner = m.group(1).decode("ascii").lower()
            if inner in ("request", "response"):
                return RecordKind(inner)
            if inner == "warcinfo":
                return RecordKind.WARCINFO
    return RecordKind.OTHER


def open_archive(source: IO[bytes], compressed: bool | None = None) -> Iterator[WatRecord | ArchiveError]:
    """Yield the records of a WARC/WAT stream in order.

    ``compressed=None`` sniffs the gzip magic.  Unreadable records are
    yielded as :class:`ArchiveError` items and reading continues at the next
    ``WARC/`` line; a corrupt gzip stream ends iteration with one error item.
    """
    head = source.read(2)
    if compressed is None:
        compressed = head == _GZIP_MAGIC
    if compressed:
        chunks = _gunzip_chunks(_Prefixed(head, source))
    else:
        chunks = _plain_chunks(source, head)
    reader = _ByteReader(chunks)
    reported = False

    while True:
        line = reader.readline()
        if not line:
            break
        start = reader.offset - len(line)
        if not line.strip():
            continue
        if not line.startswith(b"WARC/"):
            yield ArchiveError(ErrorKind.MALFORMED_RECORD_HEADER, start, "expected WARC version line")
            line = _resync(reader)
            if not line:
                break
            start = reader.offset - len(line)
        headers, ok = _read_headers(reader)
        if not ok:
            yield ArchiveError(ErrorKind.MALFORMED_RECORD_HEADER, start, "header block ended early")
            reported = True
            break
        try:
            length = int(headers["content-length"])
            if length < 0:
                raise ValueError
        except (KeyError, ValueError):
            yield ArchiveError(ErrorKind.MALFORMED_RECORD_HEADER, start, "bad Content-Length")
            continue
        payload = reader.read(length)
        if len(payload) < length:
            yield ArchiveError(ErrorKind.MALFORMED_RECORD_HEADER, start, "record truncated")
            reported = True
            break
        kind = _kind_of(headers.get("warc-type", ""), payload)
        yield WatRecord(kind, payload, start, headers)

    if reader.corrupt is not None:
        yield ArchiveError(ErrorKind.CORRUPT_GZIP, reader.corrupt.offset, str(reader.corrupt))
    elif reader.truncated and not reported:
        yield ArchiveError(ErrorKind.CORRUPT_GZIP, reader.offset, "gzip stream truncated")


class _Prefixed:
    def __init__(self, head: bytes, source: IO[bytes]):
        self._head = head
        self._source = source

    def read(self, n: int) -> bytes:
        if self._head:
            head, self._head = self._head, b""
            return head + self._source.read(max(n - len(head), 0))
        return self._source.read(n)


def _resync(reader: _ByteReader) -> bytes:
    while True:
        line = reader.readline()
        if not line or line.startswith(b"WARC/"):
            return line


def _read_headers(reader: _ByteReader) -> tuple[dict[str, str], bool]:
    headers: dict[str, str] = {}
    while True:
        line = reader.readline()
        if not line:
            return headers, False
        if line in (b"\r\n", b"\n"):
            return headers, True
        name, sep, value = line.decode("utf-8", "replace").partition(":")
        if sep:
            headers[name.strip().lower()] = value.strip()


def _member(obj: Any, *path: str) -> Any:
    for key in path:
        if not isinstance(obj, dict):
            return None
        obj = obj.get(key)
    return obj


def _as_list(obj: Any) -> list:
    return obj if isinstance(obj, list) else []


def _opt_str(value: Any) -> str | None:
    return value if isinstance(value, str) else None


def extract_envelope(record: WatRecord) -> PageEnvelope:
    """Pull target URI, Content-Type, body links, head links and metas out of a response."""
    try:
        doc = json.loads(record.payload)
    except (ValueError, UnicodeDecodeError) as exc:
        raise UnparseableJson(str(exc)) from None
    if not isinstance(doc, dict):
        raise UnparseableJson("payload is not a JSON object")

    target = _member(doc, "Envelope", "WARC-Header-Metadata", "WARC-Target-URI")
    if not isinstance(target, str) or not target:
        raise MissingTargetUri(f"record at offset {record.byte_offset}")

    response = _member(doc, *RESPONSE_PATH)
    content_type = _opt_str(_member(response, "Headers", "Content-Type"))
    html = _member(response, "HTML-Metadata")

    raw_links = _as_list(_member(html, "Links"))
    links = []
    malformed = 0
    for entry in raw_links:
        url = entry.get("url") if isinstance(entry, dict) else None
        if not isinstance(url, str):
            malformed += 1
            continue
        links.append(LinkEntry(_opt_str(entry.get("path")) or "", url))

    head = _member(html, "Head")
    head_links = []
    for entry in _as_list(_member(head, "Link")):
        if not isinstance(entry, dict):
            continue
        # Common Crawl writes the href under "url"
        href = _opt_str(entry.get("href")) or _opt_str(entry.get("url"))
        rel = _opt_str(entry.get("rel"))
        if href is None and rel is None:
            continue
        head_links.append(HeadLinkEntry(rel, href))
    head_metas = []
    for entry in _as_list(_member(head, "Metas")):
        if not isinstance(entry, dict):
            continue
        name, content = _opt_str(entry.get("name")), _opt_str(entry.get("content"))
        if name is None and content is None:
            continue
        head_metas.append(HeadMetaEntry(name, content))

    digest = _opt_str(_member(doc, "Envelope", "WARC-Header-Metadata", "WARC-Payload-Digest"))
    proxy = hashlib.sha1(
        json.dumps(raw_links, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
    return PageEnvelope(
        target_uri=target,
        content_type=content_type,
        body_links=links,
        head_links=head_links,
        head_metas=head_metas,
        payload_digest=digest,
        proxy_digest="proxy:" + proxy,
        malformed_links=malformed,
    )
