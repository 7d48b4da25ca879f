import json

import pytest

from pidscan.bloom import BloomFilter, LocatingFilter
from pidscan.corpus import CorpusSpec, Planting, generate_corpus, mixed_corpus_spec
from pidscan.pipeline import (EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, InvalidManifest, JobManifest, merge_files,
                              release_summary_path, resolve_and_build_filter, scan, scan_shard,
                              shard_summary_path)
from pidscan.resolver import HttpTransport, ResolverPolicy
from pidscan.tables import ShardSummary, merge_all


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    spec = mixed_corpus_spec(200, seed=5, actionable=60, originals=10, head_metas=8, head_links=3, duplicates=4)
    paths, manifest = generate_corpus(spec, d, shards=4)
    return [str(p) for p in paths], manifest


def job(paths, out, **kw):
    return JobManifest("2017-04", paths, str(out), **kw)


def test_pool_matches_single_pass_oracle(corpus, tmp_path):
    paths, _ = corpus
    oracle = merge_all(scan_shard(p) for p in paths)
    result = scan(job(paths, tmp_path), workers=2)
    assert result.exit_code == EXIT_OK and result.summary == oracle
    assert ShardSummary.load(release_summary_path(tmp_path, "2017-04")) == oracle


def test_resume_reprocesses_only_missing(corpus, tmp_path):
    paths, _ = corpus
    first = scan(job(paths, tmp_path), workers=1)
    shard_summary_path(tmp_path, "2017-04", paths[2]).unlink()
    second = scan(job(paths, tmp_path), workers=1, resume=True)
    assert second.processed == [paths[2]] and len(second.skipped) == 3
    assert second.summary == first.summary


def test_all_shards_unreadable(tmp_path):
    missing = [str(tmp_path / f"nope{i}.wat.gz") for i in range(3)]
    result = scan(job(missing, tmp_path / "out"), workers=1, retries=1)
    assert result.exit_code == EXIT_FATAL and result.summary is None
    listed = json.loads((tmp_path / "out" / "failures.json").read_text())
    assert [f["shard"] for f in listed] == missing and all(f["attempts"] == 2 for f in listed)


def test_partial_failure_under_threshold(corpus, tmp_path):
    paths, _ = corpus
    result = scan(job(paths + [str(tmp_path / "gone.wat.gz")], tmp_path / "out"), workers=2, retries=0)
    assert result.exit_code == EXIT_PARTIAL and result.summary.pages == 200
    result = scan(job(paths[:1] + [str(tmp_path / "gone.wat.gz")], tmp_path / "out2"), workers=1, retries=0,
                  fail_threshold=0.25)
    assert result.exit_code == EXIT_FATAL


def test_manifest_validation(tmp_path):
    with pytest.raises(InvalidManifest):
        JobManifest("r", [], str(tmp_path))
    with pytest.raises(InvalidManifest):
        JobManifest("r", ["a", "a"], str(tmp_path))
    m = JobManifest("r", ["shards/a.gz"], "out")
    m.save(tmp_path / "job.json")
    loaded = JobManifest.load(tmp_path / "job.json")
    assert loaded.shard_paths == [str(tmp_path / "shards" / "a.gz")]
    assert loaded.output_dir == str(tmp_path / "out")


def test_merge_files_refuses_mixed_releases(tmp_path):
    ShardSummary.empty().save(tmp_path / "a.gz", "2014-04")
    ShardSummary.empty().save(tmp_path / "b.gz", "2017-04")
    with pytest.raises(ValueError):
        merge_files([tmp_path / "a.gz", tmp_path / "b.gz"], tmp_path / "m.gz")


def test_bloom_false_positives_are_verified_away(tmp_path):
    spec = CorpusSpec(6, [Planting("locating", "https://pub.example/hit", 2, (0, 3)),
                          Planting("plain", "https://pub.example/miss", 1, (1,))], filler_links=3, seed=2)
    paths, _ = generate_corpus(spec, tmp_path / "c")
    # a one-bit filter answers yes to everything
    saturated = BloomFilter(8, 1, bits=b"\xff")
    filt = LocatingFilter(saturated, {"https://pub.example/hit"})
    filt.save(tmp_path / "f.bloom")
    result = scan(job([str(p) for p in paths], tmp_path / "out", filter_path=str(tmp_path / "f.bloom")), workers=1)
    s = result.summary
    assert s.locating_table.to_json() == {"https://pub.example/hit": [2, 2]}
    assert s.error_tallies["bloom_false_positive"] > 0


def test_resolve_and_build_filter_zero_pids(tmp_path, monkeypatch):
    monkeypatch.delenv("PIDSCAN_CACHE_DIR", raising=False)
    built = resolve_and_build_filter(ShardSummary.empty(), tmp_path, "2014-04")
    assert built.resolution.success_display() == "n/a"
    assert not built.filter.bloom.contains_many(["https://x.example/"]).any()
    assert built.filter_path.exists() and json.loads(built.stats_path.read_text())["success"] == "n/a"


def test_resolve_warm_cache_and_env_dir(tmp_path, web, monkeypatch):
    monkeypatch.setenv("PIDSCAN_CACHE_DIR", str(tmp_path / "cache"))
    s = ShardSummary.empty()
    s.pid_table.add("DOI 10.1/a", 2, 1)
    s.pid_table.add("Handle 20.1/b", 1, 1)
    web.redirect("doi.org", "/10.1/a", "https://pub.example/a")
    web.ok("pub.example", "/a")
    web.route("hdl.handle.net", "/20.1/b", (404, None))
    policy = ResolverPolicy(per_host_rate={h: 1000.0 for h in ("doi.org", "hdl.handle.net", "pub.example")})
    transport = HttpTransport(host_map=web.host_map("doi.org", "hdl.handle.net", "pub.example"))
    built = resolve_and_build_filter(s, tmp_path / "out", "2014-04", policy, transport)
    assert built.cache_path.parent == tmp_path / "cache"
    assert built.resolution.resolved == 1 and built.resolution.success_display() == "50.0%"
    assert built.filter.exact == {"https://pub.example/a"}
    again = resolve_and_build_filter(s, tmp_path / "out", "2014-04", policy, transport)
    assert again.resolution.requests_sent == 0 and again.resolution.resolved == 1
