"""Count persistent-identifier usage (DOI, Handle, ARK) in web-archive link metadata."""
from .bloom import BloomFilter, LocatingFilter
from .dedup import CrawlStats, HllSketch, compute_crawl_stats
from .pids import Form, PidObservation, Source, classify, extract_pid
from .resolver import RedirectResolution, ResolverClient, ResolverPolicy
from .tables import FrequencyTable, ShardSummary, merge, tabulate_page
from .uri import NormalizedUri, normalize
from .watchlist import DEFAULT_WATCH_LIST, ResolverWatchList, SchemeClass

__version__ = "0.1.0"

__all__ = [
    "BloomFilter", "LocatingFilter", "CrawlStats", "HllSketch", "compute_crawl_stats", "Form",
    "PidObservation", "Source", "classify", "extract_pid", "RedirectResolution", "ResolverClient",
    "ResolverPolicy", "FrequencyTable", "ShardSummary", "merge", "tabulate_page", "NormalizedUri",
    "normalize", "DEFAULT_WATCH_LIST", "ResolverWatchList", "SchemeClass",
]
