"""Recognition of original, actionable and locating PID forms."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Protocol

from .uri import NormalizedUri, normalize
from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList, SchemeClass

ACTIONABLE_SCHEMES = frozenset({"http", "https", None})
INFO_NAMESPACES = {"hdl/": SchemeClass.HANDLE, "doi/": SchemeClass.DOI}


class Form(str, Enum):
    ORIGINAL = "original"
    ACTIONABLE = "actionable"
    LOCATING = "locating"


class Source(str, Enum):
    BODY_LINK = "body_links"
    HEAD_LINK = "head_links"
    HEAD_META = "head_metas"


class EmptyPid(ValueError):
    pass


class MembershipFilter(Protocol):
    def probe(self, uri: NormalizedUri) -> bool: ...


@dataclass(frozen=True)
class PidObservation:
    form: Form
    scheme_class: SchemeClass
    pid: str
    source: Source
    full_uri: NormalizedUri
    resolver_host: str | None = None
    meta_name: str | None = None

    @property
    def key(self) -> str:
        return pid_key(self.scheme_class, self.pid)


def pid_key(scheme_class: SchemeClass, pid: str) -> str:
    return f"{SchemeClass(scheme_class).value} {pid}"


def split_pid_key(key: str) -> tuple[SchemeClass, str]:
    cls, _, pid = key.partition(" ")
    return SchemeClass(cls), pid


def canonical_pid(scheme_class: SchemeClass, pid: str) -> str:
    # DOI prefixes are case-insensitive; suffixes and handles are left alone
    if scheme_class == SchemeClass.DOI:
        prefix, slash, suffix = pid.partition("/")
        return prefix.lower() + slash + suffix
    return pid


def _original_form(uri: NormalizedUri) -> tuple[SchemeClass, str] | None:
    if uri.scheme == "doi":
        # doi://10.1000/182 parses the prefix as an authority
        body = (uri.host or "") + uri.path
        body = body[1:] if body.startswith("/") else body
        if not body.startswith("10."):
            return None
        return SchemeClass.DOI, body
    if uri.scheme == "info" and uri.host is None:
        for prefix, cls in INFO_NAMESPACES.items():
            if uri.path.startswith(prefix):
                body = uri.path[len(prefix):]
                if cls == SchemeClass.DOI and not body.startswith("10."):
                    return None
                return cls, body
    return None


def is_actionable(uri: NormalizedUri, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> bool:
    return uri.host is not None and uri.host in watch_list and uri.scheme in ACTIONABLE_SCHEMES


def extract_pid(uri: NormalizedUri, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> str:
    """Canonical PID string shared by every spelling of one identifier.

    Query, fragment, scheme and resolver host play no part in the result.
    Raises :class:`EmptyPid` when nothing is left after stripping them, and
    ``ValueError`` for URIs that carry no PID form at all.
    """
    if is_actionable(uri, watch_list):
        cls = watch_list.scheme_class(uri.host)
        pid = uri.path[1:] if uri.path.startswith("/") else uri.path
    else:
        found = _original_form(uri)
        if found is None:
            if uri.scheme in ("doi", "info"):
                raise EmptyPid(uri.raw)
            raise ValueError(f"not a PID form: {uri.raw!r}")
        cls, pid = found
    if not pid:
        raise EmptyPid(uri.raw)
    return canonical_pid(cls, pid)


def classify(
    uri: NormalizedUri,
    source: Source = Source.BODY_LINK,
    locating_filter: MembershipFilter | None = None,
    watch_list: ResolverWatchList = DEFAULT_WATCH_LIST,
) -> PidObservation | None:
    if is_actionable(uri, watch_list):
        pid = uri.path[1:] if uri.path.startswith("/") else uri.path
        if not pid:
            return None
        cls = watch_list.scheme_class(uri.host)
        return PidObservation(
            Form.ACTIONABLE, cls, canonical_pid(cls, pid), source, uri, resolver_host=uri.host
        )
    found = _original_form(uri)
    if found is not None:
        cls, pid = found
        if not pid:
            return None
        return PidObservation(Form.ORIGINAL, cls, canonical_pid(cls, pid), source, uri)
    if (
        locating_filter is not None
        and uri.scheme in ("http", "https")
        and uri.host
        and locating_filter.probe(uri)
    ):
        return PidObservation(Form.LOCATING, SchemeClass.OTHER, uri.locating_key(), source, uri)
    return None


def _original_doi(text: str | None, source: Source, watch_list: ResolverWatchList, name=None):
    if not text:
        return None
    uri = normalize(text, watch_list)
    if uri.scheme != "doi":
        return None
    obs = classify(uri, source, watch_list=watch_list)
    if obs is None:
        return None
    if name is not None:
        obs = PidObservation(obs.form, obs.scheme_class, obs.pid, source, uri, meta_name=name)
    return obs


def scan_head_meta(entry, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> PidObservation | None:
    """Original-form DOI carried in a META element's content attribute."""
    return _original_doi(entry.content, Source.HEAD_META, watch_list, name=entry.name or "")


def scan_head_link(entry, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> PidObservation | None:
    return _original_doi(entry.href, Source.HEAD_LINK, watch_list)
