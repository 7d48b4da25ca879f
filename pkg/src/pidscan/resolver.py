"""Actionable -> locating resolution by following HEAD redirect chains."""
from __future__ import annotations

import json
import os
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping
from urllib.parse import urljoin, urlsplit

import requests

from .uri import NormalizedUri, normalize
from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList

USER_AGENT = "pidscan/0.1 (+persistent-identifier usage study)"


class Outcome(str, Enum):
    OK = "ok"
    HTTP_ERROR = "http_error"
    DNS_FAILURE = "dns_failure"
    CONNECT_TIMEOUT = "connect_timeout"
    CONNECTION_ERROR = "connection_error"
    TOO_MANY_HOPS = "too_many_hops"
    REDIRECT_LOOP = "redirect_loop"
    MISSING_LOCATION = "missing_location"
    BAD_URI = "bad_uri"


@dataclass
class ResolverPolicy:
    max_hops: int = 10
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    default_rate: float = 5.0
    per_host_rate: dict[str, float] = field(default_factory=dict)
    per_host_concurrency: int = 4
    max_concurrency: int = 16
    get_fallback: bool = False
    user_agent: str = USER_AGENT

    def rate_for(self, host: str) -> float:
        return self.per_host_rate.get(host, self.default_rate)


@dataclass
class RedirectResolution:
    start: NormalizedUri
    hops: list[tuple[int, str]]
    terminal_status: int | None
    locating: NormalizedUri | None
    outcome: Outcome
    elapsed: float = 0.0
    attempts: int = 1
    used_get: bool = False

    @property
    def ok(self) -> bool:
        return self.locating is not None

    def same_chain(self, other: "RedirectResolution") -> bool:
        """Equality ignoring timing and retry bookkeeping."""
        return (self.start, self.hops, self.terminal_status, self.locating, self.outcome) == (
            other.start, other.hops, other.terminal_status, other.locating, other.outcome
        )

    def to_record(self, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> dict:
        return {
            "start": self.start.serialize(watch_list),
            "hops": [[s, loc] for s, loc in self.hops],
            "terminal_status": self.terminal_status,
            "locating": None if self.locating is None else self.locating.serialize(watch_list),
            "outcome": self.outcome.value,
            "used_get": self.used_get,
            "timestamp": round(time.time(), 3),
        }

    @classmethod
    def from_record(cls, rec: Mapping, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST) -> "RedirectResolution":
        loc = rec.get("locating")
        return cls(
            start=normalize(rec["start"], watch_list),
            hops=[(int(s), str(loc_)) for s, loc_ in rec.get("hops", [])],
            terminal_status=rec.get("terminal_status"),
            locating=None if loc is None else normalize(loc, watch_list),
            outcome=Outcome(rec.get("outcome", "ok" if loc is not None else "http_error")),
            used_get=bool(rec.get("used_get", False)),
            attempts=0,
        )


@dataclass
class Response:
    status: int
    location: str | None


class TransportError(Exception):
    def __init__(self, outcome: Outcome, detail: str = ""):
        super().__init__(detail or outcome.value)
        self.outcome = outcome


Transport = Callable[[str, str, float], Response]


class HttpTransport:
    """HEAD/GET without redirect following.

    ``host_map`` sends requests for a host to another base URL while keeping
    the original ``Host`` header, which is how tests point resolver hosts at a
    local server.
    """

    def __init__(self, user_agent: str = USER_AGENT, host_map: Mapping[str, str] | None = None):
        self.user_agent = user_agent
        self.host_map = dict(host_map or {})
        self._local = threading.local()

    def _session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = self._local.session = requests.Session()
            s.headers["User-Agent"] = self.user_agent
        return s

    def __call__(self, method: str, url: str, timeout: float) -> Response:
        parts = urlsplit(url)
        headers = {}
        target = url
        base = self.host_map.get(parts.hostname or "")
        if base is not None:
            headers["Host"] = parts.netloc
            target = base.rstrip("/") + (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
        try:
            r = self._session().request(
                method, target, headers=headers, timeout=timeout, allow_redirects=False, stream=True
            )
            r.close()
        except requests.exceptions.ConnectTimeout as exc:
            raise TransportError(Outcome.CONNECT_TIMEOUT, str(exc)) from None
        except requests.exceptions.Timeout as exc:
            raise TransportError(Outcome.CONNECT_TIMEOUT, str(exc)) from None
        except requests.exceptions.ConnectionError as exc:
            if _is_dns_failure(exc):
                raise TransportError(Outcome.DNS_FAILURE, str(exc)) from None
            raise TransportError(Outcome.CONNECTION_ERROR, str(exc)) from None
        except requests.exceptions.RequestException as exc:
            raise TransportError(Outcome.CONNECTION_ERROR, str(exc)) from None
        return Response(r.status_code, r.headers.get("Location"))


def _is_dns_failure(exc: BaseException) -> bool:
    seen = set()
    stack = [exc]
    while stack:
        e = stack.pop()
        if e is None or id(e) in seen:
            continue
        seen.add(id(e))
        if isinstance(e, socket.gaierror) or "NameResolutionError" in type(e).__name__:
            return True
        if "Name or service not known" in str(e) or "nodename nor servname" in str(e):
            return True
        stack.extend([e.__cause__, e.__context__])
        stack.extend(a for a in getattr(e, "args", ()) if isinstance(a, BaseException))
    return False


class HostRateLimiter:
    """Spaces request starts to each host at least ``1/rate`` seconds apart."""

    def __init__(self, policy: ResolverPolicy, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.policy = policy
        self._clock = clock
        self._sleep = sleep
        self._next: dict[str, float] = {}
        self._lock = threading.Lock()
        self._sems: dict[str, threading.Semaphore] = {}

    def semaphore(self, host: str) -> threading.Semaphore:
        with self._lock:
            sem = self._sems.get(host)
            if sem is None:
                sem = self._sems[host] = threading.Semaphore(self.policy.per_host_concurrency)
            return sem

    def wait(self, host: str) -> None:
        rate = self.policy.rate_for(host)
        if rate <= 0:
            return
        with self._lock:
            now = self._clock()
            slot = max(now, self._next.get(host, now))
            self._next[host] = slot + 1.0 / rate
        delay = slot - self._clock()
        if delay > 0:
            self._sleep(delay)


class ResolverClient:
    def __init__(self, policy: ResolverPolicy | None = None, transport: Transport | None = None,
                 watch_list: ResolverWatchList = DEFAULT_WATCH_LIST):
        self.policy = policy or ResolverPolicy()
        self.transport = transport or HttpTransport(self.policy.user_agent)
        self.watch_list = watch_list
        self.limiter = HostRateLimiter(self.policy)
        self.requests_sent = 0
        self._count_lock = threading.Lock()

    def _request(self, method: str, url: str) -> tuple[Response, int]:
        host = (urlsplit(url).hostname or "").lower()
        attempts = 0
        while True:
            attempts += 1
            with self.limiter.semaphore(host):
                self.limiter.wait(host)
                with self._count_lock:
                    self.requests_sent += 1
                try:
                    resp = self.transport(method, url, self.policy.timeout)
                    retry = resp.status in (429, 503)
                    error = None
                except TransportError as exc:
                    if exc.outcome == Outcome.DNS_FAILURE:
                        raise
                    retry, error = True, exc
            if not retry or attempts > self.policy.retries:
                if error is not None:
                    raise error
                return resp, attempts
            time.sleep(self.policy.backoff * 2 ** (attempts - 1))

    def resolve(self, uri: NormalizedUri | str) -> RedirectResolution:
        """Follow redirects from ``uri`` until a 200, an error, a loop or hop exhaustion."""
        start = normalize(uri, self.watch_list) if isinstance(uri, str) else uri
        t0 = time.monotonic()
        hops: list[tuple[int, str]] = []
        attempts = 0
        used_get = False

        def done(outcome, status=None, locating=None):
            return RedirectResolution(start, hops, status, locating, outcome,
                                      time.monotonic() - t0, max(attempts, 1), used_get)

        if start.scheme not in ("http", "https") or not start.host:
            return done(Outcome.BAD_URI)
        current = start
        url = start.serialize(self.watch_list)
        seen = {current}
        while True:
            try:
                resp, n = self._request("HEAD", url)
                attempts += n
                if resp.status in (405, 501) and self.policy.get_fallback:
                    resp, n = self._request("GET", url)
                    attempts += n
                    used_get = True
            except TransportError as exc:
                return done(exc.outcome)
            if resp.status == 200:
                return done(Outcome.OK, 200, current)
            if 300 <= resp.status < 400:
                if not resp.location:
                    return done(Outcome.MISSING_LOCATION, resp.status)
                if len(hops) >= self.policy.max_hops:
                    return done(Outcome.TOO_MANY_HOPS, resp.status)
                hops.append((resp.status, resp.location))
                url = urljoin(url, resp.location.strip())
                current = normalize(url, self.watch_list)
                if current in seen:
                    return done(Outcome.REDIRECT_LOOP, resp.status)
                seen.add(current)
                url = current.serialize(self.watch_list)
                continue
            return done(Outcome.HTTP_ERROR, resp.status)

    def resolve_batch(self, uris: Iterable[NormalizedUri | str], cache: "ResolutionCache | None" = None
                      ) -> list[RedirectResolution]:
        """Resolve many URIs; duplicates and cached entries cost no requests.

        Results come back in input order; one failure never aborts the batch.
        """
        items = [normalize(u, self.watch_list) if isinstance(u, str) else u for u in uris]
        keys = [u.serialize(self.watch_list) for u in items]
        results: dict[str, RedirectResolution] = {}
        todo: dict[str, NormalizedUri] = {}
        for key, u in zip(keys, items):
            if key in results or key in todo:
                continue
            cached = cache.get(key) if cache is not None else None
            if cached is not None:
                results[key] = cached
            else:
                todo[key] = u
        if todo:
            with ThreadPoolExecutor(max_workers=self.policy.max_concurrency) as pool:
                for key, res in zip(todo, pool.map(self.resolve, todo.values())):
                    results[key] = res
                    if cache is not None:
                        cache.put(key, res)
            if cache is not None:
                cache.flush()
        return [results[k] for k in keys]


class ResolutionCache:
    """Append-only JSON-lines store of resolutions keyed by start URI."""

    def __init__(self, path: str | Path | None, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST):
        self.path = Path(path) if path is not None else None
        self.watch_list = watch_list
        self._entries: dict[str, RedirectResolution] = {}
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except ValueError:
                        # a torn final line from an interrupted run
                        continue
                    res = RedirectResolution.from_record(rec, watch_list)
                    self._entries[res.start.serialize(watch_list)] = res

    def get(self, key: str) -> RedirectResolution | None:
        return self._entries.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def values(self):
        return self._entries.values()

    def put(self, key: str, res: RedirectResolution) -> None:
        with self._lock:
            self._entries[key] = res
            if self.path is None:
                return
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("a", encoding="utf-8")
            self._fh.write(json.dumps(res.to_record(self.watch_list), sort_keys=True) + "\n")

    def flush(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        self.flush()
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def resolve(uri: NormalizedUri | str, policy: ResolverPolicy | None = None,
            transport: Transport | None = None) -> RedirectResolution:
    return ResolverClient(policy, transport).resolve(uri)


def resolve_batch(uris: Iterable[NormalizedUri | str], policy: ResolverPolicy | None = None,
                  cache: ResolutionCache | None = None, transport: Transport | None = None
                  ) -> list[RedirectResolution]:
    return ResolverClient(policy, transport).resolve_batch(uris, cache)
