"""Compare a scanned summary with a generator manifest, table by table."""
from pidscan.dedup import HllSketch
from pidscan.tables import TABLE_NAMES


def mismatches(summary, manifest):
    bad = []
    for name in TABLE_NAMES:
        if getattr(summary, name).to_json() != manifest["tables"][name]:
            bad.append(name)
    if summary.pages != manifest["pages"]:
        bad.append("pages")
    if dict(summary.record_kinds) != manifest["record_kinds"]:
        bad.append("record_kinds")
    if {k: v for k, v in summary.error_tallies.items() if v} != manifest["error_tallies"]:
        bad.append("error_tallies")
    for attr, key in (("page_digest_sketch", "digests"), ("uri_sketch", "target_uris")):
        sk = getattr(summary, attr)
        if sk != HllSketch(sk.precision, sk.seed).add_many(manifest[key]):
            bad.append(attr)
    if summary.locating_table is not None and summary.locating_table.to_json() != manifest["locating_table"]:
        bad.append("locating_table")
    return bad
