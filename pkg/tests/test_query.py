"""Query model: XML parsing, canonical serialization, validation, evaluation."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from theia.query import (
    GroupNode,
    PredicateSpec,
    QueryParseError,
    QuerySpec,
    QueryValidationError,
    conjunctive_pipeline,
    evaluate_query,
    parse_query,
    pipeline_keys,
    serialize_query,
    validate,
)
from tests.conftest import random_photo, uniform_photo

FACE_DETECTION_XML = """<?xml version="1.0" encoding="ISO-8859-1"?>
<query id="848753739">
  <and number_of_predicates="1">
    <predicate name="Face (front)" type="C">
      <arguments predicate_object="libface-predicate.so"
        init_function="f_init_opencv_fdetect"
        eval_function="f_eval_opencv_fdetect"
        fini_function="f_fini_opencv_fdetect"
        blob="haarcascade_frontalface_default.xml"
        predicate_object_version="2"/>
      <parameters num="6" p0="1.2" p1="24" p2="24"
        p3="1" p4="1" p5="4"/>
      <dependencies num="0"/>
      <threshold value="1"/>
    </predicate>
  </and>
</query>
"""


def query1_spec(query_id: int = 41) -> QuerySpec:
    return QuerySpec(
        id=query_id,
        root=GroupNode(
            "and",
            (
                PredicateSpec("Face (front)", (), 1.0),
                PredicateSpec("Texture_Match", (169.0, 3.0, 2.0), 0.75),
                PredicateSpec("RGB_Threshold", ("B",), 0.6),
            ),
        ),
    )


class TestParse:
    def test_face_detection_query(self):
        q = parse_query(FACE_DETECTION_XML)
        assert q.id == 848753739
        assert q.root.op == "and"
        assert len(q.root.children) == 1
        leaf = q.root.children[0]
        assert leaf.name == "Face (front)"
        assert leaf.threshold == 1.0
        assert leaf.parameters == (1.2, 24.0, 24.0, 1.0, 1.0, 4.0)
        assert dict(leaf.arguments)["predicate_object"] == "libface-predicate.so"

    def test_minimal_all_accept(self):
        xml = (
            '<query id="0"><and number_of_predicates="1">'
            '<predicate name="All_Accept"><parameters num="0"/>'
            '<dependencies num="0"/><threshold value="0"/></predicate></and></query>'
        )
        q = parse_query(xml)
        assert q.id == 0
        assert q.root.children[0].name == "All_Accept"

    def test_query1_round_trip(self):
        xml = serialize_query(query1_spec())
        q = parse_query(xml)
        assert len(q.root.children) == 3
        assert [c.name for c in q.root.children] == [
            "Face (front)",
            "Texture_Match",
            "RGB_Threshold",
        ]
        assert parse_query(serialize_query(q)) == q

    def test_malformed_xml_reports_position(self):
        with pytest.raises(QueryParseError) as err:
            parse_query("<query id='1'>\n  <and><broken</and></query>")
        assert err.value.line is not None
        assert "line" in str(err.value)

    def test_unknown_predicate_name(self):
        xml = (
            '<query id="1"><and number_of_predicates="1">'
            '<predicate name="NoSuchPredicate"><parameters num="0"/>'
            '<dependencies num="0"/><threshold value="0"/></predicate></and></query>'
        )
        with pytest.raises(QueryValidationError, match="NoSuchPredicate"):
            parse_query(xml)

    def test_predicate_count_mismatch(self):
        xml = (
            '<query id="1"><and number_of_predicates="2">'
            '<predicate name="All_Accept"><parameters num="0"/>'
            '<dependencies num="0"/><threshold value="0"/></predicate></and></query>'
        )
        with pytest.raises(QueryValidationError, match="number_of_predicates"):
            parse_query(xml)

    def test_fig6_serialization_is_canonical(self):
        q = parse_query(FACE_DETECTION_XML)
        text = serialize_query(q)
        assert text.startswith('<?xml version="1.0" encoding="ISO-8859-1"?>\n')
        assert '\n  <and number_of_predicates="1">' in text
        assert "\n    <predicate " in text  # two-space indentation per level


class TestValidate:
    def test_valid_query1(self):
        assert validate(query1_spec()) == []

    def test_unknown_name_finding(self):
        spec = QuerySpec(1, GroupNode("and", (PredicateSpec("NoSuchPredicate", (), 0.0),)))
        findings = validate(spec)
        assert len(findings) == 1
        assert "unknown predicate" in findings[0].reason

    def test_threshold_out_of_range(self):
        spec = QuerySpec(1, GroupNode("and", (PredicateSpec("Texture_Match", (1.0, 1.0, 1.0), 2.0),)))
        findings = validate(spec)
        assert len(findings) == 1
        assert "out of range" in findings[0].reason


class TestConjunctivePipeline:
    def test_query1_pipeline(self):
        pipeline = conjunctive_pipeline(query1_spec())
        assert [p.name for p in pipeline] == ["Face (front)", "Texture_Match", "RGB_Threshold"]

    def test_single_predicate(self):
        spec = QuerySpec(1, GroupNode("and", (PredicateSpec("All_Accept", (), 0.0),)))
        assert len(conjunctive_pipeline(spec)) == 1

    def test_or_rooted_is_not_conjunctive(self):
        spec = QuerySpec(1, GroupNode("or", (PredicateSpec("All_Accept", (), 0.0),)))
        assert conjunctive_pipeline(spec) is None

    def test_nested_and_is_not_conjunctive(self):
        inner = GroupNode("and", (PredicateSpec("All_Accept", (), 0.0),))
        spec = QuerySpec(1, GroupNode("and", (inner,)))
        assert conjunctive_pipeline(spec) is None

    def test_duplicate_names_get_distinct_keys(self):
        leaves = (
            PredicateSpec("Synthetic", (0.5, 1.0, 1.0), 0.5),
            PredicateSpec("Synthetic", (0.5, 1.0, 2.0), 0.5),
        )
        assert pipeline_keys(leaves) == ["Synthetic", "Synthetic#1"]


def _leaf_strategy():
    return st.sampled_from(
        [
            PredicateSpec("All_Accept", (), 0.0),
            PredicateSpec("RGB_Threshold", ("B",), 0.5),
            PredicateSpec("RGB_Threshold", ("R",), 0.25),
            PredicateSpec("Synthetic", (0.5, 2.0, 7.0), 0.5),
            PredicateSpec("Synthetic", (0.2, 1.0, 8.0), 0.5),
            PredicateSpec("Texture_Match", (128.0, 10.0, 5.0), 0.4),
        ]
    )


def _tree_strategy(depth: int = 2):
    if depth == 0:
        return _leaf_strategy()
    return st.one_of(
        _leaf_strategy(),
        st.builds(
            lambda op, children: GroupNode(op, tuple(children)),
            st.sampled_from(["and", "or"]),
            st.lists(_tree_strategy(depth - 1), min_size=1, max_size=3),
        ),
    )


@st.composite
def _query_strategy(draw):
    root = draw(
        st.builds(
            lambda op, children: GroupNode(op, tuple(children)),
            st.sampled_from(["and", "or"]),
            st.lists(_tree_strategy(1), min_size=1, max_size=4),
        )
    )
    return QuerySpec(id=draw(st.integers(0, 2**31 - 1)), root=root)


class TestProperties:
    @given(_query_strategy())
    @settings(max_examples=60, deadline=None)
    def test_serialize_parse_round_trip(self, spec):
        text = serialize_query(spec)
        reparsed = parse_query(text)
        assert parse_query(serialize_query(reparsed)) == reparsed

    @given(_query_strategy(), st.integers(0, 10_000), st.integers(0, 9))
    @settings(max_examples=40, deadline=None)
    def test_verdict_independent_of_leaf_order(self, spec, photo_seed, shuffle_seed):
        photo = random_photo(f"prop-{photo_seed}", photo_seed)
        baseline = evaluate_query(spec, photo).accepted

        def shuffle(node, rng):
            if isinstance(node, PredicateSpec):
                return node
            children = [shuffle(c, rng) for c in node.children]
            rng.shuffle(children)
            return GroupNode(node.op, tuple(children))

        shuffled = QuerySpec(spec.id, shuffle(spec.root, random.Random(shuffle_seed)))
        assert evaluate_query(shuffled, photo).accepted == baseline

    @given(_query_strategy(), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_verdict_deterministic(self, spec, photo_seed):
        photo = random_photo(f"det-{photo_seed}", photo_seed)
        first = evaluate_query(spec, photo)
        second = evaluate_query(spec, photo)
        assert first.accepted == second.accepted
        assert first.score == second.score


class TestEvaluate:
    def test_and_short_circuits_on_reject(self):
        spec = QuerySpec(
            1,
            GroupNode(
                "and",
                (
                    PredicateSpec("Synthetic", (0.0, 1.0, 1.0), 0.5),  # rejects all
                    PredicateSpec("All_Accept", (), 0.0),
                ),
            ),
        )
        verdict = evaluate_query(spec, uniform_photo("x", (1, 2, 3)))
        assert not verdict.accepted
        assert list(verdict.leaf_verdicts) == ["Synthetic"]

    def test_and_score_is_min_or_score_is_max(self, blue_photo):
        and_spec = QuerySpec(
            1,
            GroupNode(
                "and",
                (
                    PredicateSpec("RGB_Threshold", ("B",), 0.5),
                    PredicateSpec("RGB_Threshold", ("R",), 0.0),
                ),
            ),
        )
        v = evaluate_query(and_spec, blue_photo)
        assert v.accepted
        assert v.score == min(x.score for x in v.leaf_verdicts.values()) == 0.0

        or_spec = QuerySpec(1, GroupNode("or", and_spec.root.children))
        v = evaluate_query(or_spec, blue_photo)
        assert v.accepted
        assert v.score == 1.0
