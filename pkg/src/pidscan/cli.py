"""Command-line entry point: ``pidscan <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .bloom import DEFAULT_FPR
from .corpus import CorpusSpec, generate_corpus, mixed_corpus_spec
from .report import build_locating_report, write_bundle
from .resolver import HttpTransport, ResolutionCache, ResolverPolicy
from .tables import ShardSummary
from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList


def _pairs(values: list[str] | None, flag: str, conv=str) -> dict:
    out = {}
    for item in values or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise SystemExit(f"{flag} expects HOST=VALUE, got {item!r}")
        try:
            out[key.lower()] = conv(val)
        except ValueError:
            raise SystemExit(f"{flag}: bad value in {item!r}") from None
    return out


def _watch_list(args) -> ResolverWatchList:
    return ResolverWatchList.load(args.watchlist) if getattr(args, "watchlist", None) else DEFAULT_WATCH_LIST


def _policy(args) -> ResolverPolicy:
    return ResolverPolicy(max_hops=args.max_hops, per_host_rate=_pairs(args.rate, "--rate", float))


def _transport(args, policy: ResolverPolicy) -> HttpTransport:
    return HttpTransport(policy.user_agent, _pairs(args.host_map, "--host-map"))


def _load(path: str) -> tuple[ShardSummary, str]:
    return ShardSummary.from_bytes(Path(path).read_bytes())


def _manifest(args, filter_path: str | None = None) -> pipeline.JobManifest:
    m = pipeline.JobManifest.load(args.manifest)
    if args.out:
        m.output_dir = args.out
    if args.watchlist:
        m.watch_list_path = args.watchlist
    if filter_path:
        m.filter_path = filter_path
        m.release_id = m.release_id + "-located"
    return m


def cmd_scan(args, filter_path: str | None = None) -> int:
    result = pipeline.scan(_manifest(args, filter_path), args.workers, args.retries, args.fail_threshold, args.resume)
    for f in result.failures:
        print(f"failed: {f['shard']}: {f['error']}", file=sys.stderr)
    if result.summary_path is not None:
        print(result.summary_path)
    print(f"processed {len(result.processed)}, skipped {len(result.skipped)}, failed {len(result.failures)}",
          file=sys.stderr)
    return result.exit_code


def cmd_rescan(args) -> int:
    return cmd_scan(args, args.filter)


def cmd_merge(args) -> int:
    merged = pipeline.merge_files(args.summaries, args.out)
    print(f"{args.out}: {merged.pages} pages", file=sys.stderr)
    return pipeline.EXIT_OK


def cmd_resolve(args) -> int:
    summary, rid = _load(args.summary)
    policy = _policy(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = ResolutionCache(pipeline.cache_path(out, rid), _watch_list(args))
    try:
        res = pipeline.resolve_pids(summary, policy, cache, _transport(args, policy), _watch_list(args))
    finally:
        cache.close()
    (out / f"{rid}.resolve.json").write_text(json.dumps(res.to_json(), indent=1) + "\n", encoding="utf-8")
    print(f"resolved {res.resolved} of {res.source_distinct} PIDs ({res.success_display()})")
    return pipeline.EXIT_OK


def cmd_buildfilter(args) -> int:
    summary, rid = _load(args.summary)
    out = Path(args.out)
    if args.resolve:
        policy = _policy(args)
        built = pipeline.resolve_and_build_filter(summary, out, rid, policy, _transport(args, policy),
                                                  _watch_list(args), args.seed, args.fpr)
        print(built.filter_path)
        print(f"resolved {built.resolution.resolved} of {built.resolution.source_distinct} PIDs "
              f"({built.resolution.success_display()})")
        return pipeline.EXIT_OK
    cache = ResolutionCache(pipeline.cache_path(out, rid), _watch_list(args))
    keys = pipeline.filter_keys_from_cache(cache)
    path = out / f"{rid}.locating.bloom"
    pipeline.build_filter(keys, path, args.fpr, args.seed)
    print(path)
    return pipeline.EXIT_OK


def cmd_report(args) -> int:
    releases = {}
    for p in args.summaries:
        s, rid = _load(p)
        releases[rid or Path(p).name.split(".")[0]] = s
    locating = None
    if args.resolve_stats and args.target:
        stats = json.loads(Path(args.resolve_stats).read_text(encoding="utf-8"))
        target, _ = _load(args.target)
        hits = target.locating_table
        locating = build_locating_report(stats["source_distinct"], stats["source_tokens"], stats["resolved"],
                                         len(hits) if hits else 0, hits.tokens if hits else 0)
    write_bundle(args.out, releases, locating=locating, svg=args.svg)
    print(Path(args.out) / "report.json")
    return pipeline.EXIT_OK


def cmd_gencorpus(args) -> int:
    if args.spec:
        spec = CorpusSpec.from_json(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    else:
        spec = mixed_corpus_spec(args.pages, args.seed)
    paths, _ = generate_corpus(spec, args.out, args.shards)
    out = Path(args.out)
    job = pipeline.JobManifest(args.release, [p.name for p in paths], "out")
    job.save(out / "job.json")
    print(out / "job.json")
    return pipeline.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pidscan", description="Persistent-identifier usage scans over WAT archives.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def job_flags(p):
        p.add_argument("--manifest", required=True, help="job manifest JSON")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
        p.add_argument("--watchlist", help="resolver watch-list file (host<TAB>class)")
        p.add_argument("--out", help="output directory (overrides the manifest)")
        p.add_argument("--resume", action="store_true", help="skip shards whose summary already exists")
        p.add_argument("--retries", type=int, default=2)
        p.add_argument("--fail-threshold", type=float, default=0.5, help="fatal when more than this fraction fails")

    def resolver_flags(p):
        p.add_argument("--max-hops", type=int, default=10)
        p.add_argument("--rate", action="append", metavar="HOST=N", help="requests per second for HOST")
        p.add_argument("--host-map", action="append", metavar="HOST=ADDR",
                       help="send requests for HOST to ADDR (host:port), keeping the Host header")

    p = sub.add_parser("scan", help="scan shards and merge into a release summary")
    job_flags(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("rescan", help="scan again with a locating-form filter")
    job_flags(p)
    p.add_argument("--filter", required=True, help="Bloom filter file from buildfilter")
    p.set_defaults(func=cmd_rescan)

    p = sub.add_parser("merge", help="merge saved summaries")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--out", required=True, help="merged summary file")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("resolve", help="resolve one actionable URI per PID into the cache")
    p.add_argument("summary")
    p.add_argument("--out", required=True)
    p.add_argument("--watchlist")
    resolver_flags(p)
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("buildfilter", help="build the locating-form Bloom filter")
    p.add_argument("summary")
    p.add_argument("--out", required=True)
    p.add_argument("--watchlist")
    p.add_argument("--resolve", action="store_true", help="resolve first instead of reading the cache only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fpr", type=float, default=DEFAULT_FPR)
    resolver_flags(p)
    p.set_defaults(func=cmd_buildfilter)

    p = sub.add_parser("report", help="write CSV tables and report.json")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--resolve-stats", help="resolve.json of the source release")
    p.add_argument("--target", help="summary of the filter-equipped rescan")
    p.add_argument("--svg", action="store_true", help="also draw growth.svg")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gencorpus", help="write a synthetic WAT corpus with expected counts")
    p.add_argument("--out", required=True)
    p.add_argument("--pages", type=int, default=1000)
    p.add_argument("--shards", type=int, default=4)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--release", default="SYNTH")
    p.add_argument("--spec", help="CorpusSpec JSON instead of the stock mixed corpus")
    p.set_defaults(func=cmd_gencorpus)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"pidscan: error: {exc}", file=sys.stderr)
        return pipeline.EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
