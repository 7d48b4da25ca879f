"""Cleaning and decomposition of link strings harvested from WAT records.

Normalization order:

1. strip whitespace (space, tab, CR, LF, FF, VT, NBSP) anywhere in the string;
2. decode HTML character references (``&amp; &lt; &gt; &quot; &apos;`` and
   numeric references), repeating 1-2 until nothing changes;
3. split into scheme / authority / path / query / fragment (RFC 3986 regex);
4. percent-decode each component exactly once.  Hosts are always decoded.
   Path, query and fragment of PID-bearing URIs (watch-list host, or ``doi:``
   / ``info:`` scheme) are fully decoded; everywhere else only escapes of
   unreserved characters are decoded;
5. lowercase scheme and host, drop userinfo, parse the port.

:meth:`NormalizedUri.serialize` produces a string that normalizes back to the
same components, so ``normalize(u.serialize()) == u`` holds for every result.
"""
from __future__ import annotations

import re
import string
from dataclasses import dataclass, field

from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList

NO_SCHEME = "(none)"
NO_HOST = "(none)"

WHITESPACE = " \t\r\n\f\v\u00a0"
_WS_DELETE = str.maketrans("", "", WHITESPACE)

UNRESERVED = frozenset(string.ascii_letters + string.digits + "-._~")
_HEX = frozenset(string.hexdigits)
PID_SCHEMES = frozenset({"doi", "info"})

_ENTITY_RE = re.compile(r"&(amp|lt|gt|quot|apos|#[0-9]+|#[xX][0-9a-fA-F]+);")
_NAMED_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}

_URI_RE = re.compile(r"(?:([^:/?#]+):)?(?://([^/?#]*))?([^?#]*)(?:\?([^#]*))?(?:#(.*))?", re.S)
_RELATIVE_RE = re.compile(r"(?://([^/?#]*))?([^?#]*)(?:\?([^#]*))?(?:#(.*))?", re.S)
_SCHEME_RE = re.compile(r"[A-Za-z][A-Za-z0-9+.\-]*")


@dataclass(frozen=True)
class NormalizedUri:
    scheme: str | None
    host: str | None
    port: int | None
    path: str
    query: str | None
    fragment: str | None
    degenerate: bool = False
    raw: str = field(default="", compare=False)

    @property
    def had_scheme(self) -> bool:
        return self.scheme is not None

    @property
    def is_absolute(self) -> bool:
        return self.scheme is not None and self.host is not None

    def serialize(self, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> str:
        """Recompose the components into a string that normalizes back to ``self``."""
        if self.degenerate:
            return self.path
        full = _full_decode(self.scheme, self.host, watch_list)
        parts = []
        if self.scheme is not None:
            parts.append(self.scheme + ":")
        path = _protect(self.path, full, "?#" if full else "")
        if self.host is not None:
            host = self.host if self.host.startswith("[") else _protect(self.host, True, "/?#@:[]")
            parts.append("//" + host)
            if self.port is not None:
                parts.append(f":{self.port}")
        else:
            if path.startswith("//"):
                path = "/%2F" + path[2:] if full else path
            if self.scheme is None:
                m = _SCHEME_RE.match(path)
                if m and path[m.end():m.end() + 1] == ":":
                    path = f"%{ord(path[0]):02X}" + path[1:]
        parts.append(path)
        if self.query is not None:
            parts.append("?" + _protect(self.query, full, "#" if full else ""))
        if self.fragment is not None:
            parts.append("#" + _protect(self.fragment, full, ""))
        return _break_entities("".join(parts))

    def locating_key(self) -> str:
        """Membership key for locating-form URIs: scheme, host, path and query."""
        key = f"{self.scheme or ''}://{self.host or ''}{self.path}"
        if self.query is not None:
            key += "?" + self.query
        return key


def strip_whitespace(s: str) -> str:
    return s.translate(_WS_DELETE)


def _entity_sub(m: re.Match) -> str:
    name = m.group(1)
    if name[0] != "#":
        return _NAMED_ENTITIES[name]
    try:
        code = int(name[2:], 16) if name[1] in "xX" else int(name[1:])
    except ValueError:
        return m.group(0)
    if code == 0 or code > 0x10FFFF or 0xD800 <= code <= 0xDFFF:
        return m.group(0)
    return chr(code)


def decode_entities(s: str) -> str:
    """Decode the named and numeric character references once."""
    if "&" not in s:
        return s
    return _ENTITY_RE.sub(_entity_sub, s)


def clean(raw: str) -> str:
    s = strip_whitespace(raw)
    while "&" in s:
        nxt = strip_whitespace(decode_entities(s))
        if nxt == s:
            break
        s = nxt
    return s


def percent_decode(s: str, full: bool) -> str:
    """Decode each escape once; ``full=False`` keeps escapes of reserved characters."""
    if "%" not in s:
        return s
    out: list[str] = []
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c == "%" and i + 2 < n and s[i + 1] in _HEX and s[i + 2] in _HEX:
            if not full:
                ch = chr(int(s[i + 1:i + 3], 16))
                if ch in UNRESERVED:
                    out.append(ch)
                    i += 3
                    continue
                out.append(c)
                i += 1
                continue
            j = i
            buf = bytearray()
            while j + 2 < n and s[j] == "%" and s[j + 1] in _HEX and s[j + 2] in _HEX:
                buf.append(int(s[j + 1:j + 3], 16))
                j += 3
            try:
                out.append(buf.decode("utf-8"))
            except UnicodeDecodeError:
                for k, b in enumerate(buf):
                    out.append(chr(b) if b < 0x80 else s[i + 3 * k:i + 3 * k + 3])
            i = j
            continue
        out.append(c)
        i += 1
    return "".join(out)


def _protect(component: str, full: bool, delimiters: str) -> str:
    """Inverse of :func:`percent_decode` for one component."""
    if full:
        out = component.replace("%", "%25")
        for d in delimiters:
            out = out.replace(d, f"%{ord(d):02X}")
        return out
    if "%" not in component:
        return component
    # A literal '%' that would read as an unreserved escape gets its first
    # hex digit escaped, which leaves the '%' undecodable.
    out = []
    i, n = 0, len(component)
    while i < n:
        c = component[i]
        out.append(c)
        if (
            c == "%"
            and i + 2 < n
            and component[i + 1] in _HEX
            and component[i + 2] in _HEX
            and chr(int(component[i + 1:i + 3], 16)) in UNRESERVED
        ):
            out.append(f"%{ord(component[i + 1]):02X}")
            i += 2
            continue
        i += 1
    return "".join(out)


def _break_entities(s: str) -> str:
    if "&" not in s:
        return s

    def sub(m: re.Match) -> str:
        text = m.group(0)
        # escape the first letter or digit after '&'; both decode in every mode
        pos = 1 if text[1] != "#" else 2
        return text[:pos] + f"%{ord(text[pos]):02X}" + text[pos + 1:]

    return _ENTITY_RE.sub(sub, s)


def _full_decode(scheme: str | None, host: str | None, watch_list: ResolverWatchList) -> bool:
    return scheme in PID_SCHEMES or (host is not None and host in watch_list)


def _split_authority(authority: str) -> tuple[str, int | None] | None:
    hostport = authority.rpartition("@")[2]
    if hostport.startswith("["):
        end = hostport.find("]")
        if end < 0:
            return None
        host, rest = hostport[:end + 1], hostport[end + 1:]
        if rest and not rest.startswith(":"):
            return None
        port_text = rest[1:]
    elif ":" in hostport:
        host, _, port_text = hostport.rpartition(":")
    else:
        host, port_text = hostport, ""
    if port_text and not port_text.isascii() or port_text and not port_text.isdigit():
        return None
    return host, int(port_text) if port_text else None


def normalize(raw: str, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> NormalizedUri:
    """Clean and decompose ``raw``.  Never raises.

    Inputs with an unusable authority (bad port, broken IPv6 literal) come back
    with ``degenerate=True``, no scheme or host, and the cleaned string as path.
    """
    cleaned = clean(raw)
    m = _URI_RE.fullmatch(cleaned)
    scheme, authority, path, query, fragment = m.groups()
    if scheme is not None and not _SCHEME_RE.fullmatch(scheme):
        scheme = None
        authority, path, query, fragment = _RELATIVE_RE.fullmatch(cleaned).groups()

    host = port = None
    if authority is not None:
        split = _split_authority(authority)
        if split is None:
            return NormalizedUri(None, None, None, cleaned, None, None, degenerate=True, raw=raw)
        host_text, port = split
        host = strip_whitespace(percent_decode(host_text, True)).lower()
    if scheme is not None:
        scheme = scheme.lower()

    full = _full_decode(scheme, host, watch_list)

    def dec(part: str | None) -> str | None:
        if part is None:
            return None
        return strip_whitespace(percent_decode(part, full))

    return NormalizedUri(scheme, host, port, dec(path), dec(query), dec(fragment), raw=raw)


def scheme_of(uri: NormalizedUri) -> str:
    return uri.scheme if uri.scheme is not None else NO_SCHEME


def host_of(uri: NormalizedUri) -> str:
    return uri.host if uri.host else NO_HOST
