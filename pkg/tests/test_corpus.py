import pytest

from pidscan.corpus import CorpusSpec, InvalidSpec, Planting, generate_corpus, mixed_corpus_spec, noisy_spelling
from pidscan.uri import normalize


def test_spec_example_counts(tmp_path):
    spec = CorpusSpec(10, [Planting("actionable", "https://doi.org/10.1/x", 3, (0, 0, 0))])
    _, manifest = generate_corpus(spec, tmp_path)
    assert manifest["tables"]["pid_table"] == {"DOI 10.1/x": [3, 1]}
    assert manifest["pages"] == 10


def test_byte_identical_reruns(tmp_path):
    spec = mixed_corpus_spec(120, seed=3, actionable=40, originals=10, head_metas=8, head_links=3, duplicates=5)
    a, _ = generate_corpus(spec, tmp_path / "a", shards=3)
    b, _ = generate_corpus(spec, tmp_path / "b", shards=3)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_seed_changes_output(tmp_path):
    a, _ = generate_corpus(CorpusSpec(5, seed=1), tmp_path / "a")
    b, _ = generate_corpus(CorpusSpec(5, seed=2), tmp_path / "b")
    assert a[0].read_bytes() != b[0].read_bytes()


@pytest.mark.parametrize("spec", [
    CorpusSpec(0),
    CorpusSpec(5, [Planting("actionable", "https://doi.org/10.1/x", 2, (0,))]),
    CorpusSpec(5, [Planting("actionable", "https://doi.org/10.1/x", 1, (5,))]),
    CorpusSpec(5, [Planting("actionable", "https://example.com/10.1/x", 1, (0,))]),
    CorpusSpec(5, [Planting("bogus", "x", 1, (0,))]),
    CorpusSpec(5, [Planting("actionable", "https://doi.org/10.1/x", 1, (1,))], duplicate_pages=[(0, 1)]),
    CorpusSpec(5, duplicate_pages=[(0, 0)]),
    CorpusSpec(5, duplicate_pages=[(0, 1), (1, 2)]),
])
def test_invalid_specs(spec, tmp_path):
    with pytest.raises(InvalidSpec):
        generate_corpus(spec, tmp_path)


def test_mixed_spec_meets_coverage():
    spec = mixed_corpus_spec(1000)
    spec.validate()
    act = [p for p in spec.plantings if p.kind == "actionable"]
    hosts = {normalize(p.value).host for p in act}
    assert len(hosts) == 5 and sum(p.multiplicity for p in act) >= 250
    assert sum(p.multiplicity for p in spec.plantings if p.kind == "original-body") >= 50
    assert sum(p.multiplicity for p in spec.plantings if p.kind == "head-meta") >= 30
    assert len(spec.duplicate_pages) == 20


def test_noisy_spelling_is_equivalent():
    import random

    rng = random.Random(0)
    for value, kind in [("https://doi.org/10.1/ABC-7", "actionable"), ("doi:10.2/x.y", "original-body"),
                        ("info:hdl/20.500/9", "original-body"), ("https://pub.example/a/b1", "locating")]:
        for _ in range(200):
            noisy = noisy_spelling(value, rng, kind)
            u, clean = normalize(noisy), normalize(value)
            assert (u.scheme, u.host, u.path) == (clean.scheme, clean.host, clean.path), noisy


def test_spec_json_round_trip():
    spec = mixed_corpus_spec(50, actionable=5, originals=2, head_metas=2, head_links=1, duplicates=2)
    assert CorpusSpec.from_json(spec.to_json()) == spec


def test_mixed_corpus_scans_to_manifest(tmp_path):
    from manifest_check import mismatches
    from pidscan.pipeline import scan_shard
    from pidscan.tables import merge_all

    paths, manifest = generate_corpus(mixed_corpus_spec(300, seed=11, actionable=90, originals=20, head_metas=12,
                                                        head_links=5, duplicates=6), tmp_path, shards=3)
    assert mismatches(merge_all(scan_shard(str(p)) for p in paths), manifest) == []
