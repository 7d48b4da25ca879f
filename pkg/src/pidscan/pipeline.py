"""Shard scanning, merging, resolution and filter building."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import requests

from .bloom import DEFAULT_FPR, BloomFilter, LocatingFilter
from .dedup import DEFAULT_PRECISION
from .pids import split_pid_key
from .resolver import ResolutionCache, ResolverClient, ResolverPolicy, Transport
from .tables import ShardSummary, merge_all, tabulate_page
from .uri import NormalizedUri
from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList
from .watreader import ArchiveError, EnvelopeError, RecordKind, extract_envelope, open_archive

log = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2
CACHE_ENV = "PIDSCAN_CACHE_DIR"


class InvalidManifest(ValueError):
    pass


@dataclass
class JobManifest:
    release_id: str
    shard_paths: list[str]
    output_dir: str
    watch_list_path: str | None = None
    filter_path: str | None = None
    policy: ResolverPolicy = field(default_factory=ResolverPolicy)
    hll_precision: int = DEFAULT_PRECISION
    hll_seed: int = 0

    def __post_init__(self):
        self.shard_paths = [str(p) for p in self.shard_paths]
        if not self.shard_paths:
            raise InvalidManifest("manifest lists no shards")
        if len(set(self.shard_paths)) != len(self.shard_paths):
            raise InvalidManifest("manifest lists a shard twice")
        if not self.release_id or "/" in self.release_id:
            raise InvalidManifest("release_id must be a non-empty label without '/'")

    def watch_list(self) -> ResolverWatchList:
        return ResolverWatchList.load(self.watch_list_path) if self.watch_list_path else DEFAULT_WATCH_LIST

    def to_json(self) -> dict:
        return {
            "release_id": self.release_id,
            "shards": self.shard_paths,
            "output_dir": self.output_dir,
            "watch_list": self.watch_list_path,
            "filter": self.filter_path,
            "hll_precision": self.hll_precision,
            "hll_seed": self.hll_seed,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "JobManifest":
        path = Path(path)
        d = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent

        def rel(p):
            if p is None or _is_url(p):
                return p
            return str((base / p).resolve()) if not os.path.isabs(p) else p

        try:
            return cls(
                release_id=d["release_id"],
                shard_paths=[rel(p) for p in d["shards"]],
                output_dir=rel(d.get("output_dir", "out")),
                watch_list_path=rel(d.get("watch_list")),
                filter_path=rel(d.get("filter")),
                hll_precision=d.get("hll_precision", DEFAULT_PRECISION),
                hll_seed=d.get("hll_seed", 0),
            )
        except KeyError as exc:
            raise InvalidManifest(f"manifest is missing {exc}") from None


def _is_url(path: str) -> bool:
    return path.startswith(("http://", "https://"))


def open_source(path: str) -> IO[bytes]:
    """Local file or a streamed HTTP(S) body behind the same read() interface."""
    if _is_url(path):
        resp = requests.get(path, stream=True, timeout=60)
        resp.raise_for_status()
        resp.raw.decode_content = False
        return resp.raw
    return open(path, "rb")


class VerifyingFilter:
    """Probe the Bloom filter, then confirm against the exact key set.

    Bloom hits that fail the exact check are counted as
    ``bloom_false_positive`` and treated as misses.
    """

    def __init__(self, inner: LocatingFilter, tallies: Counter):
        self.inner = inner
        self.tallies = tallies

    def probe(self, uri: NormalizedUri) -> bool:
        if not self.inner.probe(uri):
            return False
        if self.inner.verify(uri.locating_key()):
            return True
        self.tallies["bloom_false_positive"] += 1
        return False


def scan_stream(stream: IO[bytes], watch_list: ResolverWatchList = DEFAULT_WATCH_LIST,
                locating_filter: LocatingFilter | None = None, hll_precision: int = DEFAULT_PRECISION,
                hll_seed: int = 0) -> ShardSummary:
    summary = ShardSummary.empty(watch_list, hll_precision, hll_seed, with_locating=locating_filter is not None)
    probe = VerifyingFilter(locating_filter, summary.error_tallies) if locating_filter is not None else None
    for item in open_archive(stream):
        if isinstance(item, ArchiveError):
            summary.error_tallies[item.kind.value] += 1
            continue
        summary.record_kinds[item.record_kind.value] += 1
        if item.record_kind != RecordKind.RESPONSE:
            continue
        try:
            envelope = extract_envelope(item)
        except EnvelopeError as exc:
            summary.error_tallies[exc.kind.value] += 1
            continue
        tabulate_page(summary, envelope, watch_list, probe)
    return summary


def scan_shard(path: str, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST,
               locating_filter: LocatingFilter | None = None, hll_precision: int = DEFAULT_PRECISION,
               hll_seed: int = 0) -> ShardSummary:
    src = open_source(path)
    try:
        return scan_stream(src, watch_list, locating_filter, hll_precision, hll_seed)
    finally:
        src.close()


def shard_summary_path(output_dir: str | Path, release_id: str, shard: str) -> Path:
    digest = hashlib.sha1(shard.encode("utf-8")).hexdigest()[:16]
    return Path(output_dir) / "shards" / f"{release_id}-{digest}.summary.json.gz"


def release_summary_path(output_dir: str | Path, release_id: str) -> Path:
    return Path(output_dir) / f"{release_id}.summary.json.gz"


_FILTERS: dict[str, LocatingFilter] = {}


def _scan_task(shard: str, out_path: str, release_id: str, watch_list_text: str, filter_path: str | None,
               hll_precision: int, hll_seed: int) -> str:
    watch_list = ResolverWatchList.loads(watch_list_text)
    filt = None
    if filter_path is not None:
        # one load per worker process
        filt = _FILTERS.get(filter_path)
        if filt is None:
            filt = _FILTERS[filter_path] = LocatingFilter.load(filter_path)
    summary = scan_shard(shard, watch_list, filt, hll_precision, hll_seed)
    summary.save(out_path, release_id)
    return out_path


@dataclass
class ScanResult:
    summary: ShardSummary | None
    summary_path: Path | None
    processed: list[str]
    skipped: list[str]
    failures: list[dict]
    exit_code: int


def scan(manifest: JobManifest, workers: int | None = None, retries: int = 2, fail_threshold: float = 0.5,
         resume: bool = False) -> ScanResult:
    """Scan every shard, write one summary per shard, then the merged release summary.

    A shard that still fails after ``retries`` further attempts goes to
    ``failures.json``.  The exit code is 2 when more than ``fail_threshold``
    of the shards failed, 1 when some did, else 0.
    """
    out = Path(manifest.output_dir)
    (out / "shards").mkdir(parents=True, exist_ok=True)
    watch_list = manifest.watch_list()
    wl_text = watch_list.dumps()
    workers = workers or os.cpu_count() or 1
    targets = {s: shard_summary_path(out, manifest.release_id, s) for s in manifest.shard_paths}

    skipped = [s for s in manifest.shard_paths if resume and targets[s].exists()]
    pending = [s for s in manifest.shard_paths if s not in set(skipped)]
    attempts: Counter = Counter()
    errors: dict[str, str] = {}
    processed: list[str] = []

    def args(s):
        return (s, str(targets[s]), manifest.release_id, wl_text, manifest.filter_path,
                manifest.hll_precision, manifest.hll_seed)

    while pending:
        batch, pending = pending, []
        if workers == 1 or len(batch) == 1:
            outcomes = []
            for s in batch:
                try:
                    outcomes.append((s, _scan_task(*args(s)), None))
                except Exception as exc:  # noqa: BLE001 - any shard failure is recorded, not raised
                    outcomes.append((s, None, exc))
        else:
            with ProcessPoolExecutor(max_workers=min(workers, len(batch))) as pool:
                futures = [(s, pool.submit(_scan_task, *args(s))) for s in batch]
                outcomes = []
                for s, fut in futures:
                    try:
                        outcomes.append((s, fut.result(), None))
                    except Exception as exc:  # noqa: BLE001
                        outcomes.append((s, None, exc))
        for s, _, exc in outcomes:
            attempts[s] += 1
            if exc is None:
                processed.append(s)
                errors.pop(s, None)
                continue
            errors[s] = f"{type(exc).__name__}: {exc}"
            log.warning("shard %s failed (attempt %d): %s", s, attempts[s], errors[s])
            if attempts[s] <= retries:
                pending.append(s)

    failures = [{"shard": s, "error": errors[s], "attempts": attempts[s]}
                for s in manifest.shard_paths if s in errors]
    (out / "failures.json").write_text(json.dumps(failures, indent=1) + "\n", encoding="utf-8")

    done = [s for s in manifest.shard_paths if s not in errors]
    if not done:
        return ScanResult(None, None, processed, skipped, failures, EXIT_FATAL)
    merged = merge_all(ShardSummary.load(targets[s]) for s in done)
    path = release_summary_path(out, manifest.release_id)
    merged.save(path, manifest.release_id)
    if len(failures) > fail_threshold * len(manifest.shard_paths):
        code = EXIT_FATAL
    else:
        code = EXIT_PARTIAL if failures else EXIT_OK
    return ScanResult(merged, path, processed, skipped, failures, code)


def merge_files(paths: Iterable[str | Path], out_path: str | Path) -> ShardSummary:
    """Merge saved summaries; they must all carry the same release id."""
    loaded = [ShardSummary.from_bytes(Path(p).read_bytes()) for p in paths]
    releases = {rid for _, rid in loaded}
    if len(releases) > 1:
        raise ValueError(f"refusing to merge summaries from different releases: {sorted(releases)}")
    merged = merge_all(s for s, _ in loaded)
    merged.save(out_path, releases.pop() if releases else "")
    return merged


# ---------------------------------------------------------------- resolution

def representative_uris(summary: ShardSummary, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST
                        ) -> list[NormalizedUri]:
    """One actionable URI per distinct PID, at the canonical resolver for its class."""
    out = []
    for key in sorted(summary.pid_table.keys()):
        cls, pid = split_pid_key(key)
        out.append(NormalizedUri("https", watch_list.canonical_host(cls), None, "/" + pid, None, None))
    return out


def cache_path(out_dir: str | Path, release_id: str) -> Path:
    base = os.environ.get(CACHE_ENV)
    return Path(base or out_dir) / f"{release_id}.resolutions.jsonl"


@dataclass
class ResolveResult:
    source_distinct: int
    source_tokens: int
    resolved: int
    outcomes: dict[str, int]
    locating_keys: list[str]
    requests_sent: int

    @property
    def success(self) -> float | None:
        return self.resolved / self.source_distinct if self.source_distinct else None

    def success_display(self) -> str:
        from .report import fmt_pct

        return "n/a" if self.success is None else fmt_pct(self.success, 1)

    def to_json(self) -> dict:
        return {
            "source_distinct": self.source_distinct,
            "source_tokens": self.source_tokens,
            "resolved": self.resolved,
            "success": self.success_display(),
            "outcomes": dict(sorted(self.outcomes.items())),
            "requests_sent": self.requests_sent,
        }


def resolve_pids(summary: ShardSummary, policy: ResolverPolicy | None = None, cache: ResolutionCache | None = None,
                 transport: Transport | None = None, watch_list: ResolverWatchList = DEFAULT_WATCH_LIST
                 ) -> ResolveResult:
    uris = representative_uris(summary, watch_list)
    client = ResolverClient(policy, transport, watch_list)
    results = client.resolve_batch(uris, cache) if uris else []
    keys = sorted({r.locating.locating_key() for r in results if r.ok})
    return ResolveResult(
        source_distinct=len(summary.pid_table),
        source_tokens=summary.pid_table.tokens,
        resolved=sum(r.ok for r in results),
        outcomes=dict(Counter(r.outcome.value for r in results)),
        locating_keys=keys,
        requests_sent=client.requests_sent,
    )


def build_filter(keys: Iterable[str], path: str | Path | None = None, target_fpr: float = DEFAULT_FPR,
                 seed: int = 0, provisioned_n: int | None = None) -> LocatingFilter:
    keys = sorted(set(keys))
    bloom = BloomFilter.for_capacity(max(provisioned_n or len(keys), 1), target_fpr, seed)
    bloom.add_many(keys)
    filt = LocatingFilter(bloom, set(keys))
    if path is not None:
        filt.save(path)
    return filt


def filter_keys_from_cache(cache: ResolutionCache) -> list[str]:
    return sorted({r.locating.locating_key() for r in cache.values() if r.ok})


@dataclass
class FilterBuildResult:
    resolution: ResolveResult
    filter: LocatingFilter
    filter_path: Path
    cache_path: Path
    stats_path: Path


def resolve_and_build_filter(summary: ShardSummary, out_dir: str | Path, release_id: str,
                             policy: ResolverPolicy | None = None, transport: Transport | None = None,
                             watch_list: ResolverWatchList = DEFAULT_WATCH_LIST, seed: int = 0,
                             target_fpr: float = DEFAULT_FPR) -> FilterBuildResult:
    """Resolve one actionable URI per PID and build the locating filter from the successes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cpath = cache_path(out, release_id)
    cache = ResolutionCache(cpath, watch_list)
    try:
        res = resolve_pids(summary, policy, cache, transport, watch_list)
    finally:
        cache.close()
    fpath = out / f"{release_id}.locating.bloom"
    filt = build_filter(res.locating_keys, fpath, target_fpr, seed)
    spath = out / f"{release_id}.resolve.json"
    spath.write_text(json.dumps(res.to_json(), indent=1) + "\n", encoding="utf-8")
    log.info("resolved %s of %d PIDs (%s)", res.resolved, res.source_distinct, res.success_display())
    return FilterBuildResult(res, filt, fpath, cpath, spath)
