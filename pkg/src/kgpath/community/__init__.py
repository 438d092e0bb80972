from kgpath.community.hierarchy import (
    Community,
    CommunityHierarchy,
    SummaryReport,
    build_hierarchy,
    summarize,
)
from kgpath.community.leiden import leiden_partition, modularity

__all__ = [
    "Community",
    "CommunityHierarchy",
    "SummaryReport",
    "build_hierarchy",
    "leiden_partition",
    "modularity",
    "summarize",
]
