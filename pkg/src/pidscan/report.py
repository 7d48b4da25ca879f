"""Derived tables from merged release summaries.

Display precision: duplicate percentages 1 decimal, actionable ratios 5
decimals, usage rates 2 decimals, leakage ratios whole percent, link totals
3 significant figures in units of 10^9.  Rounding is half-up on the decimal
repr of the value.
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dedup import CrawlStats, compute_crawl_stats
from .pids import split_pid_key
from .tables import FrequencyTable, Overlap, ShardSummary, overlap
from .watchlist import SchemeClass

CLASSES = (SchemeClass.DOI, SchemeClass.HANDLE, SchemeClass.OTHER)


def _round(x: float, places: int) -> Decimal:
    return Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def fmt_fixed(x: float, places: int) -> str:
    return str(_round(x, places))


def fmt_pct(fraction: float, places: int = 1) -> str:
    return f"{_round(fraction * 100, places)}%"


def fmt_magnitude(x: float, exponent: int = 9, sig: int = 3) -> str:
    """``299 x 10^9`` style, rounded to ``sig`` significant figures."""
    scaled = Decimal(repr(float(x))) / (Decimal(10) ** exponent)
    if scaled == 0:
        return f"0 x 10^{exponent}"
    places = sig - scaled.adjusted() - 1
    value = scaled.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP) if places > 0 else \
        scaled.quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return f"{value} x 10^{exponent}"


def per_million(n: int, pages: int) -> float:
    return n / pages * 1e6 if pages else 0.0


def per_ten_thousand(n: int, pages: int) -> float:
    return n / pages * 1e4 if pages else 0.0


def crawl_stats_from_summary(summary: ShardSummary) -> CrawlStats:
    """Estimate the crawl-size columns from a summary's own sketches."""
    return compute_crawl_stats(
        round(summary.uri_sketch.estimate()),
        summary.pages,
        round(summary.page_digest_sketch.estimate()),
    )


@dataclass
class ReleaseReport:
    release_id: str
    crawl_stats: CrawlStats
    link_totals: dict[str, int]
    actionable: dict[str, float]
    scheme_class_breakdown: dict[str, dict[str, int]]
    original_rates: dict[str, float]
    original_counts: dict[str, int]
    meta_name_ranking: list[tuple[str, int]]
    proxy_digest_pages: int = 0
    notes: list[str] = field(default_factory=list)

    def display(self) -> dict[str, str]:
        s = self.crawl_stats
        return {
            "release": self.release_id,
            "uris_crawled": f"{s.uris_crawled:,}",
            "pages_retrieved": f"{s.pages_retrieved:,}",
            "dup_uri_pct": fmt_pct(s.dup_uri_pct, 1),
            "digests": f"{s.distinct_digests:,}",
            "dup_pages_pct": fmt_pct(s.dup_pages_pct, 1),
            "links_total": fmt_magnitude(self.link_totals["raw"]),
            "links_corrected": fmt_magnitude(self.link_totals["corrected"]),
            "actionable_uris": f"{int(self.actionable['uris']):,}",
            "actionable_ratio": fmt_fixed(self.actionable["ratio"], 5),
            "distinct_pids": f"{int(self.actionable['distinct_pids']):,}",
            "body_per_million_pages": fmt_fixed(self.original_rates["body_per_million_pages"], 2),
            "head_meta_per_10k_pages": fmt_fixed(self.original_rates["head_meta_per_10k_pages"], 2),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["meta_name_ranking"] = [list(x) for x in self.meta_name_ranking]
        d["display"] = self.display()
        return d


def corrected_total(raw: int, dup_uri_pct: float) -> int:
    return round(raw * (1.0 - dup_uri_pct))


def build_release_report(summary: ShardSummary, stats: CrawlStats | None = None, release_id: str = "") -> ReleaseReport:
    stats = stats or crawl_stats_from_summary(summary)
    raw = summary.link_total
    corrected = corrected_total(raw, stats.dup_uri_pct)
    uris = summary.resolver_table.tokens
    breakdown = {c.value: {"distinct": 0, "tokens": 0} for c in CLASSES}
    for key, counts in summary.pid_table.items():
        cls, _ = split_pid_key(key)
        breakdown[cls.value]["distinct"] += 1
        breakdown[cls.value]["tokens"] += counts.tokens
    originals = summary.original_form_counts
    notes = []
    if summary.proxy_digest_pages:
        notes.append(
            f"{summary.proxy_digest_pages} pages lacked a payload digest; duplicate-page figures use a proxy digest"
        )
    return ReleaseReport(
        release_id=release_id,
        crawl_stats=stats,
        link_totals={"raw": raw, "corrected": corrected},
        actionable={
            "uris": uris,
            "uris_corrected": corrected_total(uris, stats.dup_uri_pct),
            "ratio": uris / corrected if corrected else 0.0,
            "distinct_pids": len(summary.pid_table),
        },
        scheme_class_breakdown=breakdown,
        original_rates={
            "body_per_million_pages": per_million(originals["body_links"], stats.pages_retrieved),
            "head_meta_per_10k_pages": per_ten_thousand(originals["head_metas"], stats.pages_retrieved),
            "head_link_per_10k_pages": per_ten_thousand(originals["head_links"], stats.pages_retrieved),
        },
        original_counts=originals,
        meta_name_ranking=build_meta_ranking(summary.meta_name_table),
        proxy_digest_pages=summary.proxy_digest_pages,
        notes=notes,
    )


@dataclass(frozen=True)
class LocatingReport:
    source_distinct: int
    source_tokens: int
    resolved: int
    hit_distinct: int
    hit_tokens: int

    @property
    def type_ratio(self) -> float:
        return self.hit_distinct / self.source_distinct if self.source_distinct else 0.0

    @property
    def token_ratio(self) -> float:
        return self.hit_tokens / self.source_tokens if self.source_tokens else 0.0

    @property
    def success_ratio(self) -> float | None:
        return self.resolved / self.source_distinct if self.source_distinct else None

    def display(self) -> dict[str, str]:
        success = self.success_ratio
        return {
            "type_ratio": fmt_pct(self.type_ratio, 0),
            "token_ratio": fmt_pct(self.token_ratio, 0),
            "resolution_success": "n/a" if success is None else fmt_pct(success, 1),
        }

    def rows(self) -> list[list[str]]:
        d = self.display()
        return [
            ["", "Distinct", "Total"],
            ["Actionable found (source)", f"{self.source_distinct:,}", f"{self.source_tokens:,}"],
            ["Retrieved locating form", f"{self.resolved:,}", ""],
            ["Locating found (target)", f"{self.hit_distinct:,}", f"{self.hit_tokens:,}"],
            ["Ratio", d["type_ratio"], d["token_ratio"]],
        ]

    def to_dict(self) -> dict:
        return {**asdict(self), "type_ratio": self.type_ratio, "token_ratio": self.token_ratio,
                "display": self.display()}


def build_locating_report(source_distinct: int, source_tokens: int, resolved: int,
                          hit_distinct: int, hit_tokens: int) -> LocatingReport:
    return LocatingReport(source_distinct, source_tokens, resolved, hit_distinct, hit_tokens)


def locating_report_from_tables(source_pids: FrequencyTable, resolved: int,
                                hits: FrequencyTable | None) -> LocatingReport:
    hits = hits or FrequencyTable()
    return build_locating_report(len(source_pids), source_pids.tokens, resolved, len(hits), hits.tokens)


@dataclass(frozen=True)
class OverlapReport:
    a_label: str
    b_label: str
    matrix: Overlap

    def rows(self) -> list[list[str]]:
        m = self.matrix
        return [
            ["", self.a_label, f"not {self.a_label}"],
            [self.b_label, f"{m.both:,}", f"{m.only_b:,}"],
            [f"not {self.b_label}", f"{m.only_a:,}", f"{m.neither:,}"],
        ]

    def to_dict(self) -> dict:
        return {"a": self.a_label, "b": self.b_label, **asdict(self.matrix)}


def build_overlap_report(a: Iterable[str], b: Iterable[str], a_label: str = "a", b_label: str = "b") -> OverlapReport:
    return OverlapReport(a_label, b_label, overlap(a, b))


def _keys(x) -> set[str]:
    if isinstance(x, ShardSummary):
        return x.pid_table.keys()
    if isinstance(x, FrequencyTable):
        return x.keys()
    return set(x)


def build_scheme_class_report(a, b) -> dict[str, dict[str, int]]:
    """Distinct PIDs split into a-only / both / b-only for each scheme class."""
    ka, kb = _keys(a), _keys(b)
    out = {w: {c.value: 0 for c in CLASSES} for w in ("a_only", "both", "b_only")}
    for where, keys in (("a_only", ka - kb), ("both", ka & kb), ("b_only", kb - ka)):
        for key in keys:
            out[where][split_pid_key(key)[0].value] += 1
    return out


def build_meta_ranking(meta_name_table: FrequencyTable | Mapping[str, int]) -> list[tuple[str, int]]:
    if isinstance(meta_name_table, FrequencyTable):
        counts = {k: c.tokens for k, c in meta_name_table.items()}
    else:
        counts = dict(meta_name_table)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def to_csv(rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def meta_ranking_csv(ranking: list[tuple[str, int]]) -> str:
    return to_csv([["name", "count"], *ranking])


def growth_rows(reports: Iterable[ReleaseReport]) -> list[list[str]]:
    rows = [["release", "body_n", "body_per_million_pages", "head_meta_n", "head_meta_per_10k_pages"]]
    for r in sorted(reports, key=lambda r: r.release_id):
        rows.append([
            r.release_id,
            str(r.original_counts["body_links"]),
            fmt_fixed(r.original_rates["body_per_million_pages"], 2),
            str(r.original_counts["head_metas"]),
            fmt_fixed(r.original_rates["head_meta_per_10k_pages"], 2),
        ])
    return rows


def growth_svg(reports: Sequence[ReleaseReport], width: int = 480, height: int = 260) -> str:
    """Two-series line chart of original-form usage rates per release."""
    reports = sorted(reports, key=lambda r: r.release_id)
    series = {
        "body links per 10^6 pages": [r.original_rates["body_per_million_pages"] for r in reports],
        "head meta per 10^4 pages": [r.original_rates["head_meta_per_10k_pages"] for r in reports],
    }
    colors = ["#1f77b4", "#d62728"]
    pad = 40
    top = max([v for vals in series.values() for v in vals] + [1e-9])
    n = max(len(reports) - 1, 1)

    def xy(i: int, v: float) -> str:
        x = pad + (width - 2 * pad) * i / n
        y = height - pad - (height - 2 * pad) * v / top
        return f"{x:.1f},{y:.1f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for i, r in enumerate(reports):
        x = xy(i, 0).split(",")[0]
        out.append(f'<text x="{x}" y="{height - pad + 16}" font-size="10" text-anchor="middle">{r.release_id}</text>')
    for (label, vals), color, row in zip(series.items(), colors, range(2)):
        pts = " ".join(xy(i, v) for i, v in enumerate(vals))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<text x="{pad + 8}" y="{pad - 20 + 12 * row}" font-size="10" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def crawl_stats_rows(reports: Iterable[ReleaseReport]) -> list[list[str]]:
    rows = [["release", "uris_crawled", "pages_retrieved", "dup_uri_pct", "digests", "dup_pages_pct"]]
    for r in sorted(reports, key=lambda r: r.release_id):
        d = r.display()
        rows.append([r.release_id, d["uris_crawled"], d["pages_retrieved"], d["dup_uri_pct"], d["digests"],
                     d["dup_pages_pct"]])
    return rows


def link_count_rows(reports: Iterable[ReleaseReport]) -> list[list[str]]:
    rows = [["release", "links_total", "links_corrected", "actionable_uris", "actionable_ratio", "distinct_pids"]]
    for r in sorted(reports, key=lambda r: r.release_id):
        d = r.display()
        rows.append([r.release_id, d["links_total"], d["links_corrected"], d["actionable_uris"],
                     d["actionable_ratio"], d["distinct_pids"]])
    return rows


def write_bundle(out_dir: str | Path, releases: Mapping[str, ShardSummary],
                 stats: Mapping[str, CrawlStats] | None = None,
                 locating: LocatingReport | None = None, svg: bool = False) -> dict:
    """Write one CSV per table plus ``report.json``; returns the JSON bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = stats or {}
    reports = [build_release_report(s, stats.get(rid), rid) for rid, s in sorted(releases.items())]
    bundle: dict = {"releases": [r.to_dict() for r in reports]}
    files = {
        "crawl_stats.csv": to_csv(crawl_stats_rows(reports)),
        "link_counts.csv": to_csv(link_count_rows(reports)),
        "growth.csv": to_csv(growth_rows(reports)),
    }
    ids = [r.release_id for r in reports]
    if len(ids) >= 2:
        a, b = ids[0], ids[-1]
        ov = build_overlap_report(releases[a].pid_table.keys(), releases[b].pid_table.keys(), a, b)
        sc = build_scheme_class_report(releases[a], releases[b])
        bundle["overlap"] = ov.to_dict()
        bundle["scheme_classes"] = {"a": a, "b": b, **sc}
        files["overlap.csv"] = to_csv(ov.rows())
        files["scheme_classes.csv"] = to_csv(
            [["when", *[c.value for c in CLASSES]]]
            + [[w, *[sc[w][c.value] for c in CLASSES]] for w in ("a_only", "both", "b_only")]
        )
    merged_meta: Counter = Counter()
    for s in releases.values():
        for k, c in s.meta_name_table.items():
            merged_meta[k] += c.tokens
    ranking = build_meta_ranking(dict(merged_meta))
    bundle["meta_ranking"] = [list(x) for x in ranking]
    files["meta_ranking.csv"] = meta_ranking_csv(ranking)
    if locating is not None:
        bundle["locating"] = locating.to_dict()
        files["locating.csv"] = to_csv(locating.rows())
    if svg:
        files["growth.svg"] = growth_svg(reports)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    (out / "report.json").write_text(json.dumps(bundle, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return bundle
