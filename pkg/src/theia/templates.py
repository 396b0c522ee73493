"""Query construction from predicate templates."""

from __future__ import annotations

from theia.device import derive_seed
from theia.query import GroupNode, PredicateSpec, QuerySpec

# Reference grayscale statistics of the synthesized "cloudy sky" class.
SKY_PATCH = (169.0, 3.0, 2.0)
SKY_BLUE_THRESHOLD = 160.0 / 255.0
SKY_TEXTURE_THRESHOLD = 0.75


def all_accept_query(query_id: int) -> QuerySpec:
    return QuerySpec(
        id=query_id,
        root=GroupNode("and", (PredicateSpec("All_Accept", (), 0.0),)),
    )


def sky_query(query_id: int) -> QuerySpec:
    """Cloudy-sky content query: blue-channel mean plus smooth texture."""
    return QuerySpec(
        id=query_id,
        root=GroupNode(
            "and",
            (
                PredicateSpec("RGB_Threshold", ("B",), SKY_BLUE_THRESHOLD),
                PredicateSpec("Texture_Match", SKY_PATCH, SKY_TEXTURE_THRESHOLD),
            ),
        ),
    )


def face_query(query_id: int) -> QuerySpec:
    return QuerySpec(
        id=query_id,
        root=GroupNode("and", (PredicateSpec("Face (front)", (), 1.0),)),
    )


def synthetic_leaf(selectivity: float, cost_ms: float, salt: int) -> PredicateSpec:
    return PredicateSpec("Synthetic", (selectivity, cost_ms, float(salt)), 0.5)


def synthetic_query(query_id: int, leaves: list[tuple[float, float, int]]) -> QuerySpec:
    return QuerySpec(
        id=query_id,
        root=GroupNode("and", tuple(synthetic_leaf(s, c, salt) for s, c, salt in leaves)),
    )


def partition_benchmark_queries(seed: int, base_id: int = 9_000_000) -> dict[str, QuerySpec]:
    """The three benchmark conjunctions, stand-ins with decreasing cost.

    query1 = detector + texture + color threshold; query2 drops the texture
    stage; query3 is the detector alone. Costs/selectivities give the stages
    well-separated conditional ranks (50 / ~171 / 800), so estimates order
    them correctly long before the hundredth photo.
    """
    face = (0.25, 600.0, derive_seed(seed, "face") % 2**31)
    texture = (0.3, 120.0, derive_seed(seed, "texture") % 2**31)
    rgb = (0.4, 30.0, derive_seed(seed, "rgb") % 2**31)
    return {
        "query1": synthetic_query(base_id + 1, [face, texture, rgb]),
        "query2": synthetic_query(base_id + 2, [face, rgb]),
        "query3": synthetic_query(base_id + 3, [face]),
    }
