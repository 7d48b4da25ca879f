"""Acceptance criteria. Each test carries a criterion marker; the run ends with one PASS/FAIL line per criterion."""
import gzip
import random
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from manifest_check import mismatches
from pidscan.bloom import BloomFilter
from pidscan.corpus import CorpusSpec, Planting, generate_corpus, mixed_corpus_spec
from pidscan.dedup import HllSketch, compute_crawl_stats
from pidscan.pids import Form, classify
from pidscan.pipeline import JobManifest, resolve_and_build_filter, resolve_pids, scan
from pidscan.report import build_locating_report, build_release_report, locating_report_from_tables
from pidscan.resolver import HttpTransport, Outcome, ResolverClient, ResolverPolicy
from pidscan.tables import ShardSummary, merge, merge_all, tabulate_page
from pidscan.uri import normalize
from pidscan.watreader import HeadMetaEntry, LinkEntry, PageEnvelope
from pidscan.watchlist import SchemeClass


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.2f}s, limit {self.limit}s"


# Published crawl counts: URIs crawled, pages retrieved, distinct digests.
CRAWLS = {
    "2014-04": (1_718_646_762, 2_641_371_316, 2_250_363_653),
    "2015-04": (1_934_559_347, 2_115_818_059, 1_910_978_257),
    "2016-04": (1_335_046_923, 1_335_046_923, 1_211_048_216),
    "2017-04": (2_907_715_349, 2_942_930_482, 2_915_114_582),
}


def fixture_summary(links=0, actionable=0, body=0, metas=0):
    s = ShardSummary.empty()
    if links:
        s.link_scheme_table.add("http", links, 1)
    if actionable:
        s.resolver_table.add("doi.org", actionable, 1)
    if body:
        s.original_form_table.add("body_links", body, 1)
    if metas:
        s.original_form_table.add("head_metas", metas, 1)
    return s


@pytest.mark.criterion(1, "crawl-stats arithmetic")
def test_c01_crawl_stats_rows():
    expected = {
        "2014-04": ("34.9%", "14.8%"),
        "2015-04": ("8.6%", "9.7%"),
        "2016-04": ("0.0%", "9.3%"),
        "2017-04": ("1.2%", "0.9%"),
    }
    with Timer(1.0):
        for crawl, (dup_uri, dup_pages) in expected.items():
            shown = compute_crawl_stats(*CRAWLS[crawl]).display()
            assert shown == {"dup_uri_pct": dup_uri, "dup_pages_pct": dup_pages}, crawl


@pytest.mark.criterion(2, "ratio arithmetic")
def test_c02_ratios():
    with Timer(1.0):
        r14 = build_release_report(fixture_summary(links=299 * 10**9, actionable=30_445_532),
                                   compute_crawl_stats(*CRAWLS["2014-04"]), "2014-04")
        r17 = build_release_report(fixture_summary(links=620 * 10**9, actionable=37_913_544),
                                   compute_crawl_stats(*CRAWLS["2017-04"]), "2017-04")
        assert r14.display()["actionable_ratio"] == "0.00016"
        assert r17.display()["actionable_ratio"] == "0.00006"
        loc = build_locating_report(5_369_831, 12_642_054, 5_315_129, 413_397, 1_202_610).display()
        assert loc["type_ratio"] == "8%" and loc["token_ratio"] == "10%"
        assert loc["resolution_success"] == "99.0%"


@pytest.mark.criterion(3, "rate arithmetic")
def test_c03_usage_rates():
    # crawl: (body numerator, per-million cell, head-meta numerator, per-10K cell)
    cells = {
        "2014-04": (1893, 0.72, 731_938, 2.77),
        "2015-04": (1410, 0.67, 727_167, 3.44),
        "2016-04": (1440, 1.08, 410_603, 3.08),
        "2017-04": (3550, 1.21, 459_328, 1.56),
    }
    with Timer(1.0):
        for crawl, (body, body_rate, metas, meta_rate) in cells.items():
            r = build_release_report(fixture_summary(body=body, metas=metas), compute_crawl_stats(*CRAWLS[crawl]))
            assert abs(r.original_rates["body_per_million_pages"] - body_rate) <= 0.005, crawl
            assert abs(r.original_rates["head_meta_per_10k_pages"] - meta_rate) <= 0.005, crawl
            assert r.display()["body_per_million_pages"] == f"{body_rate:.2f}"
            assert r.display()["head_meta_per_10k_pages"] == f"{meta_rate:.2f}"


@pytest.mark.criterion(4, "synthetic corpus round-trip")
def test_c04_corpus_round_trip(tmp_path):
    with Timer(30.0):
        spec = mixed_corpus_spec(1000)
        act = [p for p in spec.plantings if p.kind == "actionable"]
        assert sum(p.multiplicity for p in act) >= 250
        assert {normalize(p.value).host for p in act} == {"doi.org", "dx.doi.org", "dx.medra.org",
                                                           "hdl.handle.net", "n2t.net"}
        assert sum(p.multiplicity for p in spec.plantings if p.kind == "original-body") >= 50
        assert sum(p.multiplicity for p in spec.plantings if p.kind == "head-meta") >= 30
        assert len(spec.duplicate_pages) == 20
        paths, manifest = generate_corpus(spec, tmp_path / "corpus", shards=8)
        raw = b"".join(gzip.decompress(p.read_bytes()) for p in paths).decode()
        for marker in ("?utm_source=", "&#", "\\u00a0", "%"):
            assert marker in raw, marker
        results = {}
        for width in (1, 2, 8):
            job = JobManifest("SYNTH", [str(p) for p in paths], str(tmp_path / f"out{width}"))
            res = scan(job, workers=width)
            assert res.exit_code == 0
            assert mismatches(res.summary, manifest) == [], width
            results[width] = res.summary
        assert results[1] == results[2] == results[8]


LINKS = ["https://doi.org/10.1/a", "http://dx.doi.org/10.1/A", "http://hdl.handle.net/20.1/b", "doi:10.3/c",
         "info:hdl/20.1/b", "/local", "mailto:x@y.example", "https://pub.example/p?q=1", "HTTP://N2T.NET/ark:/1/z"]
envelopes = st.builds(
    PageEnvelope,
    target_uri=st.sampled_from([f"http://s{i}.example/p" for i in range(6)]),
    content_type=st.sampled_from(["text/html", None, "application/xhtml+xml"]),
    body_links=st.lists(st.builds(LinkEntry, st.just("A@/href"), st.sampled_from(LINKS)), max_size=5),
    head_metas=st.lists(st.builds(HeadMetaEntry, st.sampled_from(["citation_doi", "dc.identifier", None]),
                                  st.sampled_from(["doi:10.7/m", "10.7/m", "x"])), max_size=2),
    payload_digest=st.sampled_from(["sha1:A", "sha1:B", "sha1:C", None]),
)


def summarize(pages):
    s = ShardSummary.empty()
    for env in pages:
        tabulate_page(s, env)
    return s


@pytest.mark.criterion(5, "merge monoid")
def test_c05_merge_monoid():
    @settings(max_examples=200, deadline=None, derandomize=True, database=None,
              suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
    @given(st.lists(envelopes, max_size=12), st.lists(st.integers(0, 3), min_size=12, max_size=12))
    def check(pages, shard_of):
        shards = [[] for _ in range(4)]
        for env, k in zip(pages, shard_of):
            shards[k].append(env)
        a, b, c, d = (summarize(x) for x in shards)
        e = ShardSummary.empty()
        assert merge(merge(a, b), c) == merge(a, merge(b, c))
        assert merge(a, b) == merge(b, a)
        assert merge(a, e) == a == merge(e, a)
        assert merge_all([a, b, c, d]) == summarize(pages)

    with Timer(60.0):
        check()


@pytest.mark.criterion(6, "Bloom filter")
def test_c06_bloom():
    with Timer(60.0):
        members = [f"https://pub{i % 97}.example/article/{i}" for i in range(10**6)]
        probes = [f"https://pub{i % 97}.example/other/{i}" for i in range(10**6)]
        bf = BloomFilter.for_capacity(10**6, 1e-4, seed=42)
        bf.add_many(members)
        assert bf.contains_many(members).all()
        hits = bf.contains_many(probes)
        assert hits.mean() <= 2e-4, hits.mean()
        back = BloomFilter.from_bytes(bf.to_bytes())
        assert np.array_equal(back.contains_many(probes), hits)
        assert back.contains_many(members[:200_000]).all()


@pytest.mark.criterion(7, "HyperLogLog")
def test_c07_hll():
    with Timer(60.0):
        for n in (10**3, 10**4, 10**5, 10**6):
            keys = [f"key-{n}-{i}" for i in range(n)]
            truth = len(set(keys))
            est = HllSketch(14, seed=1).add_many(keys).estimate()
            assert abs(est - truth) / truth <= 0.03, (n, est)
        half = len(keys) // 2
        merged = HllSketch(14, seed=1).add_many(keys[:half]).merge(HllSketch(14, seed=1).add_many(keys[half:]))
        assert abs(merged.estimate() - truth) / truth <= 0.03


FAST = {h: 2000.0 for h in ("doi.org", "hdl.handle.net", "pub.example", "mirror.example")}


@pytest.mark.criterion(8, "resolver behaviour")
def test_c08_resolver(web):
    with Timer(120.0):
        transport = HttpTransport(host_map=web.host_map(*FAST))
        fast = ResolverClient(ResolverPolicy(per_host_rate=dict(FAST), backoff=0.01), transport)

        web.redirect("doi.org", "/10.1/chain", "https://mirror.example/a")
        web.redirect("mirror.example", "/a", "/b", status=301)
        web.redirect("mirror.example", "/b", "https://pub.example/final", status=307)
        web.ok("pub.example", "/final")
        r = fast.resolve("https://doi.org/10.1/chain")
        assert r.outcome == Outcome.OK and len(r.hops) == 3
        assert r.locating == normalize("https://pub.example/final")

        web.redirect("doi.org", "/10.1/loop", "https://mirror.example/l")
        web.redirect("mirror.example", "/l", "https://doi.org/10.1/loop")
        assert fast.resolve("https://doi.org/10.1/loop").outcome == Outcome.REDIRECT_LOOP
        for i in range(12):
            web.redirect("mirror.example", f"/h{i}", f"/h{i + 1}")
        web.ok("mirror.example", "/h12")
        deep = ResolverClient(ResolverPolicy(max_hops=10, per_host_rate=dict(FAST)), transport)
        assert deep.resolve("https://mirror.example/h0").outcome == Outcome.TOO_MANY_HOPS

        s = ShardSummary.empty()
        for i in range(1000):
            s.pid_table.add(f"DOI 10.9999/p{i}", 1, 1)
            if i % 100 == 7:
                web.route("doi.org", f"/10.9999/p{i}", (404, None))
            else:
                web.redirect("doi.org", f"/10.9999/p{i}", f"https://pub.example/art/{i}")
                web.ok("pub.example", f"/art/{i}")
        res = resolve_pids(s, ResolverPolicy(per_host_rate=dict(FAST), backoff=0.01), transport=transport)
        assert res.resolved == 990 and res.success_display() == "99.0%"
        assert len(res.locating_keys) == 990

        hosts = ("doi.org", "hdl.handle.net")
        for i in range(50):
            web.ok("doi.org", f"/10.8/r{i}")
            web.ok("hdl.handle.net", f"/20.8/r{i}")
        uris = [u for i in range(50) for u in (f"https://doi.org/10.8/r{i}", f"https://hdl.handle.net/20.8/r{i}")]
        rated = ResolverClient(ResolverPolicy(per_host_rate={h: 10.0 for h in hosts}), transport)
        t0 = time.monotonic()
        out = rated.resolve_batch(uris)
        elapsed = time.monotonic() - t0
        assert all(r.ok for r in out)
        bound = (50 - 1) / 10.0
        assert elapsed >= 0.9 * bound, elapsed
        for h in hosts:
            times = sorted(t for t in web.requests_for(h) if t >= t0)
            assert len(times) == 50
            assert times[-1] - times[0] >= 0.9 * bound
            densest = max(sum(1 for u in times if t <= u < t + 1.0) for t in times)
            assert densest <= 11, (h, densest)


LEAKED = [0, 3, 7, 12, 18, 25, 31, 33, 36, 39]


def leak_target(i):
    return f"https://pub.example/article/{i}?v=1" if i < 30 else f"https://repo.example/handle/{i}"


@pytest.mark.criterion(9, "leak detection end to end")
def test_c09_leak_detection(tmp_path, web):
    with Timer(30.0):
        doi_hosts = ("doi.org", "dx.doi.org", "dx.medra.org")
        plants = []
        for i in range(40):
            uri = (f"https://{doi_hosts[i % 3]}/10.5555/leak{i}" if i < 30
                   else f"http://hdl.handle.net/20.500.1/leak{i}")
            plants.append(Planting("actionable", uri, 1, (i,)))
            canon = f"/10.5555/leak{i}" if i < 30 else f"/20.500.1/leak{i}"
            web.redirect("doi.org" if i < 30 else "hdl.handle.net", canon, leak_target(i))
            web.ok("pub.example" if i < 30 else "repo.example", leak_target(i)[leak_target(i).index("/", 8):])
        a_paths, _ = generate_corpus(CorpusSpec(60, plants, seed=3), tmp_path / "A", shards=2)
        a = scan(JobManifest("A", [str(p) for p in a_paths], str(tmp_path / "outA")), workers=1).summary
        assert len(a.pid_table) == 40

        hosts = ("doi.org", "hdl.handle.net", "pub.example", "repo.example")
        built = resolve_and_build_filter(a, tmp_path / "res", "A", ResolverPolicy(per_host_rate={h: 2000.0 for h in hosts}),
                                         HttpTransport(host_map=web.host_map(*hosts)))
        assert built.resolution.resolved == 40

        b_plants, expected = [], {}
        for n, i in enumerate(LEAKED):
            mult = 1 + n % 4
            pages = tuple((5 * n + j) % 50 for j in range(mult))
            b_plants.append(Planting("locating", leak_target(i), mult, pages))
            expected[leak_target(i)] = [mult, len(set(pages))]
        decoys = ["https://pub.example/article/100?v=1", "https://pub.example/article/1?v=2",
                  "http://pub.example/article/2?v=1", "https://repo.example/handle/35/extra",
                  "https://other.example/article/0?v=1"]
        b_plants += [Planting("plain", d, 1, (40 + k,)) for k, d in enumerate(decoys)]
        b_paths, manifest = generate_corpus(CorpusSpec(50, b_plants, seed=4), tmp_path / "B", shards=2)
        job = JobManifest("B-located", [str(p) for p in b_paths], str(tmp_path / "outB"),
                          filter_path=str(built.filter_path))
        b = scan(job, workers=2).summary
        assert b.locating_table.to_json() == expected == manifest["locating_table"]
        report = locating_report_from_tables(a.pid_table, built.resolution.resolved, b.locating_table)
        assert report.hit_distinct == 10 and report.display()["type_ratio"] == "25%"


ACTIONABLE_HOSTS = [("doi.org", SchemeClass.DOI), ("dx.doi.org", SchemeClass.DOI), ("dx.medra.org", SchemeClass.DOI),
                    ("hdl.handle.net", SchemeClass.HANDLE), ("n2t.net", SchemeClass.OTHER)]
SAFE = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-._"
SPACES = [" ", "\t", "\n", "\r\n", " ", "&#32;", "&#x9;", "&#160;"]


@st.composite
def pid_uris(draw):
    suffix = draw(st.text(SAFE, min_size=1, max_size=12).filter(lambda s: s not in (".", "..")))
    kind = draw(st.integers(0, 7))
    if kind < 5:
        host, cls = ACTIONABLE_HOSTS[kind]
        pid = {SchemeClass.DOI: f"10.{draw(st.integers(1000, 99999))}/{suffix}",
               SchemeClass.HANDLE: f"20.500.{draw(st.integers(1, 999))}/{suffix}",
               SchemeClass.OTHER: f"ark:/13030/{suffix}"}[cls]
        scheme = draw(st.sampled_from(["http", "https"]))
        return f"{scheme}://{host}/{pid}", Form.ACTIONABLE, cls, pid
    pid = f"10.{draw(st.integers(1000, 99999))}/{suffix}"
    if kind == 5:
        return f"doi:{pid}", Form.ORIGINAL, SchemeClass.DOI, pid
    if kind == 6:
        return f"info:doi/{pid}", Form.ORIGINAL, SchemeClass.DOI, pid
    hdl = f"20.{draw(st.integers(1, 9999))}/{suffix}"
    return f"info:hdl/{hdl}", Form.ORIGINAL, SchemeClass.HANDLE, hdl


def reencode(uri, pid, rng):
    start = uri.rindex(pid)
    out = []
    for pos, ch in enumerate(uri):
        if pos >= start and ch in SAFE + "/" and rng.random() < 0.2:
            esc = f"%{ord(ch):02X}"
            ch = esc.lower() if rng.random() < 0.3 else esc
        out.append(ch)
    s = "".join(out)
    if rng.random() < 0.5:
        cut = s.index(":")
        s = s[:cut].upper() + s[cut:]
    out = []
    for ch in s:
        if ch not in "&#;" and rng.random() < 0.1:
            ent = rng.choice([f"&#{ord(ch)};", f"&#x{ord(ch):x};", f"&#X{ord(ch):X};"])
            if rng.random() < 0.2:
                ent = "&amp;" + ent[1:]
            ch = ent
        out.append(ch)
    s = "".join(out)
    for _ in range(rng.randint(0, 4)):
        pos = rng.randint(0, len(s))
        s = s[:pos] + rng.choice(SPACES) + s[pos:]
    return s


@pytest.mark.criterion(10, "normalization invariance")
def test_c10_normalization_invariance():
    @settings(max_examples=10_000, deadline=None, derandomize=True, database=None,
              suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much])
    @given(pid_uris(), st.integers(0, 2**32 - 1))
    def check(case, seed):
        uri, form, cls, pid = case
        base = classify(normalize(uri))
        assert (base.form, base.scheme_class, base.pid) == (form, cls, pid)
        noisy = reencode(uri, pid, random.Random(seed))
        obs = classify(normalize(noisy))
        assert obs is not None, noisy
        assert (obs.form, obs.scheme_class, obs.pid) == (form, cls, pid), noisy

    with Timer(30.0):
        check()
