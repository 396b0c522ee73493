"""Query model: AND/OR trees of predicate leaves and their XML wire format.

The wire format is::

    <?xml version="1.0" encoding="ISO-8859-1"?>
    <query id="848753739">
      <and number_of_predicates="1">
        <predicate name="Face (front)" type="C">
          <arguments predicate_object="libface-predicate.so" .../>
          <parameters num="6" p0="1.2" p1="24" .../>
          <dependencies num="0"/>
          <threshold value="1"/>
        </predicate>
      </and>
    </query>

``<arguments>`` names a native code object in the original format; here it
is parsed and preserved for round-tripping but execution always resolves the
predicate name against the registry. Unknown attributes on any element are
preserved as well, and canonical serialization keeps two-space indentation
and the attribute order shown above.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

from theia.predicates import Photo, PredicateRegistry, PredicateVerdict, default_registry

XML_HEADER = '<?xml version="1.0" encoding="ISO-8859-1"?>'


class QueryParseError(ValueError):
    """Malformed XML or schema violation; carries line/column when known."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class QueryValidationError(ValueError):
    """A structurally well-formed query that violates a semantic rule."""


@dataclass(frozen=True)
class PredicateSpec:
    """One leaf: a registry name, ordered parameters, an accept threshold."""

    name: str
    parameters: tuple[Union[float, str], ...] = ()
    threshold: float = 0.0
    dependencies: tuple[str, ...] = ()
    extra_attrs: tuple[tuple[str, str], ...] = ()
    arguments: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class GroupNode:
    """An internal AND/OR node with at least one child."""

    op: str  # "and" | "or"
    children: tuple["QueryNode", ...]
    extra_attrs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.op not in ("and", "or"):
            raise ValueError(f"group op must be and/or, got {self.op!r}")
        if not self.children:
            raise ValueError("group node needs at least one child")


QueryNode = Union[GroupNode, PredicateSpec]


@dataclass(frozen=True)
class QuerySpec:
    id: int
    root: GroupNode

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"query id must be non-negative, got {self.id}")

    def leaves(self) -> list[PredicateSpec]:
        return list(_iter_leaves(self.root))


def _iter_leaves(node: QueryNode) -> Iterator[PredicateSpec]:
    if isinstance(node, PredicateSpec):
        yield node
    else:
        for child in node.children:
            yield from _iter_leaves(child)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _coerce_param(text: str) -> Union[float, str]:
    try:
        return float(text)
    except ValueError:
        return text


def _numbered_attrs(elem: ET.Element, prefix: str) -> list[str]:
    num_text = elem.get("num")
    if num_text is None:
        raise QueryParseError(f"<{elem.tag}> missing num attribute")
    try:
        num = int(num_text)
    except ValueError:
        raise QueryParseError(f"<{elem.tag}> num={num_text!r} is not an integer") from None
    values = []
    for i in range(num):
        value = elem.get(f"{prefix}{i}")
        if value is None:
            raise QueryParseError(f"<{elem.tag}> declares num={num} but {prefix}{i} is missing")
        values.append(value)
    return values


def _parse_predicate(elem: ET.Element, registry: Optional[PredicateRegistry]) -> PredicateSpec:
    name = elem.get("name")
    if name is None:
        raise QueryParseError("<predicate> missing name attribute")
    if registry is not None and name not in registry:
        raise QueryValidationError(f"unknown predicate {name!r}")
    parameters: tuple[Union[float, str], ...] = ()
    dependencies: tuple[str, ...] = ()
    arguments: tuple[tuple[str, str], ...] = ()
    threshold: Optional[float] = None
    for child in elem:
        if child.tag == "parameters":
            parameters = tuple(_coerce_param(v) for v in _numbered_attrs(child, "p"))
        elif child.tag == "dependencies":
            dependencies = tuple(_numbered_attrs(child, "d"))
        elif child.tag == "threshold":
            value = child.get("value")
            if value is None:
                raise QueryParseError("<threshold> missing value attribute")
            try:
                threshold = float(value)
            except ValueError:
                raise QueryParseError(f"threshold value {value!r} is not a number") from None
        elif child.tag == "arguments":
            arguments = tuple(child.attrib.items())
        else:
            raise QueryParseError(f"unexpected element <{child.tag}> inside <predicate>")
    if threshold is None:
        raise QueryParseError(f"predicate {name!r} missing <threshold>")
    extra = tuple((k, v) for k, v in elem.attrib.items() if k != "name")
    return PredicateSpec(
        name=name,
        parameters=parameters,
        threshold=threshold,
        dependencies=dependencies,
        extra_attrs=extra,
        arguments=arguments,
    )


def _parse_group(elem: ET.Element, registry: Optional[PredicateRegistry]) -> GroupNode:
    declared = elem.get("number_of_predicates")
    children: list[QueryNode] = []
    for child in elem:
        if child.tag in ("and", "or"):
            children.append(_parse_group(child, registry))
        elif child.tag == "predicate":
            children.append(_parse_predicate(child, registry))
        else:
            raise QueryParseError(f"unexpected element <{child.tag}> inside <{elem.tag}>")
    if not children:
        raise QueryParseError(f"<{elem.tag}> must contain at least one child")
    if declared is not None and int(declared) != len(children):
        raise QueryValidationError(
            f"<{elem.tag}> declares number_of_predicates={declared} but has {len(children)} children"
        )
    extra = tuple((k, v) for k, v in elem.attrib.items() if k != "number_of_predicates")
    return GroupNode(op=elem.tag, children=tuple(children), extra_attrs=extra)


def parse_query(xml_text: str, registry: Optional[PredicateRegistry] = None) -> QuerySpec:
    """Parse the XML wire format into a QuerySpec.

    Predicate names are resolved against `registry` (the default registry
    unless one is supplied); unresolvable names raise QueryValidationError.
    """
    if registry is None:
        registry = default_registry()
    try:
        root_elem = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, column = exc.position
        raise QueryParseError(f"malformed XML: {exc.msg}", line=line, column=column) from exc
    if root_elem.tag != "query":
        raise QueryParseError(f"root element must be <query>, got <{root_elem.tag}>")
    id_text = root_elem.get("id")
    if id_text is None:
        raise QueryParseError("<query> missing id attribute")
    try:
        query_id = int(id_text)
    except ValueError:
        raise QueryParseError(f"query id {id_text!r} is not an integer") from None
    groups = list(root_elem)
    if len(groups) != 1 or groups[0].tag not in ("and", "or"):
        raise QueryParseError("<query> must contain exactly one <and> or <or> root group")
    return QuerySpec(id=query_id, root=_parse_group(groups[0], registry))


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def _fmt_number(x: float) -> str:
    return f"{x:g}"


def _escape(value: str) -> str:
    return (
        value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def _attrs(pairs: Sequence[tuple[str, str]]) -> str:
    return "".join(f' {k}="{_escape(v)}"' for k, v in pairs)


def _serialize_node(node: QueryNode, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    if isinstance(node, GroupNode):
        attrs = [("number_of_predicates", str(len(node.children)))] + list(node.extra_attrs)
        out.append(f"{pad}<{node.op}{_attrs(attrs)}>")
        for child in node.children:
            _serialize_node(child, indent + 1, out)
        out.append(f"{pad}</{node.op}>")
        return
    attrs = [("name", node.name)] + list(node.extra_attrs)
    out.append(f"{pad}<predicate{_attrs(attrs)}>")
    inner = "  " * (indent + 1)
    if node.arguments:
        out.append(f"{inner}<arguments{_attrs(node.arguments)}/>")
    params = [("num", str(len(node.parameters)))]
    params += [
        (f"p{i}", _fmt_number(p) if isinstance(p, float) else str(p))
        for i, p in enumerate(node.parameters)
    ]
    out.append(f"{inner}<parameters{_attrs(params)}/>")
    deps = [("num", str(len(node.dependencies)))]
    deps += [(f"d{i}", d) for i, d in enumerate(node.dependencies)]
    out.append(f"{inner}<dependencies{_attrs(deps)}/>")
    out.append(f'{inner}<threshold value="{_fmt_number(node.threshold)}"/>')
    out.append(f"{pad}</predicate>")


def serialize_query(spec: QuerySpec) -> str:
    out = [XML_HEADER, f'<query id="{spec.id}">']
    _serialize_node(spec.root, 1, out)
    out.append("</query>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Validation and pipeline extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    path: str
    reason: str


def _validate_node(
    node: QueryNode, registry: PredicateRegistry, path: str, findings: list[Finding]
) -> None:
    if isinstance(node, GroupNode):
        for i, child in enumerate(node.children):
            _validate_node(child, registry, f"{path}/{node.op}[{i}]", findings)
        return
    if node.name not in registry:
        findings.append(Finding(path, f"unknown predicate {node.name!r}"))
        return
    entry = registry.resolve(node.name)
    if entry.arity is not None and len(node.parameters) != entry.arity:
        findings.append(
            Finding(path, f"{node.name!r} expects {entry.arity} parameters, got {len(node.parameters)}")
        )
    lo, hi = entry.score_range
    if not lo <= node.threshold <= hi:
        findings.append(
            Finding(path, f"threshold {node.threshold:g} out of range [{lo:g}, {hi:g}]")
        )


def validate(spec: QuerySpec, registry: Optional[PredicateRegistry] = None) -> list[Finding]:
    """Return all semantic problems; an empty list means the query is runnable."""
    if registry is None:
        registry = default_registry()
    findings: list[Finding] = []
    _validate_node(spec.root, registry, "", findings)
    return findings


def conjunctive_pipeline(spec: QuerySpec) -> Optional[list[PredicateSpec]]:
    """The leaf list when the query is a single AND over leaves, else None.

    Only conjunctive queries go through ordering/partition planning;
    everything else evaluates by short-circuit tree walk.
    """
    if spec.root.op != "and":
        return None
    if any(isinstance(child, GroupNode) for child in spec.root.children):
        return None
    return list(spec.root.children)


def pipeline_keys(pipeline: Sequence[PredicateSpec]) -> list[str]:
    """Stable unique keys for pipeline positions (duplicate names get #i)."""
    seen: dict[str, int] = {}
    keys = []
    for leaf in pipeline:
        n = seen.get(leaf.name, 0)
        seen[leaf.name] = n + 1
        keys.append(leaf.name if n == 0 else f"{leaf.name}#{n}")
    return keys


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class QueryVerdict:
    accepted: bool
    score: float
    leaf_verdicts: dict[str, PredicateVerdict] = field(default_factory=dict)
    cpu_time_ms: float = 0.0


def evaluate_leaf(leaf: PredicateSpec, photo: Photo, registry: PredicateRegistry) -> PredicateVerdict:
    entry = registry.resolve(leaf.name)
    return entry.evaluate(photo, leaf.parameters, leaf.threshold)


def evaluate_query(
    spec: QuerySpec, photo: Photo, registry: Optional[PredicateRegistry] = None
) -> QueryVerdict:
    """Short-circuit left-to-right tree evaluation.

    Query score is the min (AND) / max (OR) of the scores of the leaves that
    were actually evaluated; acceptance is order-independent because the
    predicates are deterministic.
    """
    if registry is None:
        registry = default_registry()
    verdict = QueryVerdict(accepted=False, score=0.0)
    all_keys = pipeline_keys(spec.leaves())

    def count_leaves(node: QueryNode) -> int:
        if isinstance(node, PredicateSpec):
            return 1
        return sum(count_leaves(c) for c in node.children)

    def walk(node: QueryNode, offset: int) -> tuple[bool, float]:
        # offset = document-order index of this subtree's first leaf
        if isinstance(node, PredicateSpec):
            v = evaluate_leaf(node, photo, registry)
            verdict.leaf_verdicts[all_keys[offset]] = v
            verdict.cpu_time_ms += v.cpu_time_ms
            return v.accepted, v.score
        scores = []
        for child in node.children:
            ok, score = walk(child, offset)
            offset += count_leaves(child)
            scores.append(score)
            if node.op == "and" and not ok:
                return False, min(scores)
            if node.op == "or" and ok:
                return True, max(scores)
        if node.op == "and":
            return True, min(scores)
        return False, max(scores)

    verdict.accepted, verdict.score = walk(spec.root, 0)
    return verdict
