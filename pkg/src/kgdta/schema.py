"""Schema-driven graph construction and N-Triples serialization.

A schema is a JSON document that declares data sources (delimited text or
JSON-lines), the entity types they contain, and the data/object/sameAs properties
to extract per row:

    {
      "sources": [
        {"name": "prots", "path": "proteins.tsv", "format": "delimited",
         "delimiter": "\\t", "null_markers": ["", "NA"]}
      ],
      "namespaces": {"drugbank": "drug"},
      "entity_types": [
        {"name": "protein", "source": "prots", "namespace": "uniprot",
         "id_column": "id", "modality": "protein",
         "data_properties": [
           {"relation": "sequence", "column": "seq", "modality": "protein_sequence"}
         ],
         "object_properties": [
           {"relation": "target_of", "target_namespace": "drugbank",
            "target_column": "drug"}
         ],
         "same_as_links": [
           {"source_column": "id", "target_namespace": "chembl",
            "target_column": "chembl_id"}
         ]}
      ]
    }

Graphs serialize to a sorted, LF-terminated N-Triples file. Node IRIs use the
`ns://<namespace>/<percent-encoded local id>` convention; each node also gets a
`ns://meta/modality` triple and each attribute a `ns://meta/value` triple (numeric
literals are tagged `^^<ns://meta/float>` so round-trips preserve their type).
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote, unquote

from .errors import NTriplesParse, SchemaParse, SchemaValidation, SourceRead
from .graph import (
    SAME_AS,
    MultimodalGraph,
    Node,
    NodeId,
    NodeKind,
    Relation,
    RelationKind,
    attribute_node,
    entity,
)

NUMBER_MODALITY = "number"


@dataclass(frozen=True)
class DataSourceSpec:
    name: str
    path: str
    format: str  # "delimited" | "jsonl"
    delimiter: str = "\t"
    null_markers: tuple[str, ...] = ("",)


@dataclass(frozen=True)
class DataPropertySpec:
    relation: str
    column: str
    modality: str


@dataclass(frozen=True)
class ObjectPropertySpec:
    relation: str
    target_namespace: str
    target_column: str


@dataclass(frozen=True)
class SameAsSpec:
    source_column: str
    target_namespace: str
    target_column: str


@dataclass(frozen=True)
class EntityTypeSpec:
    name: str
    source: str
    namespace: str
    id_column: str
    modality: str
    data_properties: tuple[DataPropertySpec, ...] = ()
    object_properties: tuple[ObjectPropertySpec, ...] = ()
    same_as_links: tuple[SameAsSpec, ...] = ()


@dataclass(frozen=True)
class Schema:
    sources: tuple[DataSourceSpec, ...]
    entity_types: tuple[EntityTypeSpec, ...]
    namespace_modalities: dict[str, str]

    def source(self, name: str) -> DataSourceSpec:
        for s in self.sources:
            if s.name == name:
                return s
        raise SchemaValidation(f"unknown source {name!r}")


@dataclass
class BuildReport:
    rows: dict[str, int] = field(default_factory=dict)
    entities: dict[str, int] = field(default_factory=dict)
    skipped_missing_id: int = 0
    errors: list[str] = field(default_factory=list)


def _require(obj: dict, key: str, context: str):
    if key not in obj:
        raise SchemaValidation(f"{context}: missing field {key!r}")
    return obj[key]


def _nonempty_str(value, context: str) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaValidation(f"{context}: expected a non-empty string, got {value!r}")
    return value


def _source_header(spec: DataSourceSpec, base_dir: Path) -> list[str]:
    path = base_dir / spec.path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SourceRead(f"cannot read source {spec.name!r} at {path}: {exc}") from None
    if spec.format == "delimited":
        reader = csv.reader(io.StringIO(text), delimiter=spec.delimiter)
        for row in reader:
            return [c.strip() for c in row]
        return []
    for line in text.splitlines():
        if line.strip():
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SourceRead(f"{path}:1: bad JSON line: {exc}") from None
            if not isinstance(record, dict):
                raise SourceRead(f"{path}:1: JSON-lines rows must be objects")
            return list(record)
    return []


def parse_schema(text: str | bytes, base_dir: str | Path = ".") -> Schema:
    """Parse and validate schema JSON; all cross-references are checked eagerly,
    including column names against each source's header."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaParse(f"schema is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaParse("schema root must be a JSON object")

    base_dir = Path(base_dir)
    sources = []
    seen_sources = set()
    for i, raw in enumerate(_require(doc, "sources", "schema")):
        ctx = f"sources[{i}]"
        name = _nonempty_str(_require(raw, "name", ctx), f"{ctx}.name")
        if name in seen_sources:
            raise SchemaValidation(f"{ctx}: duplicate source name {name!r}")
        seen_sources.add(name)
        fmt = raw.get("format", "delimited")
        if fmt not in ("delimited", "jsonl"):
            raise SchemaValidation(f"{ctx}.format: expected 'delimited' or 'jsonl', got {fmt!r}")
        delimiter = raw.get("delimiter", "\t")
        if fmt == "delimited" and (not isinstance(delimiter, str) or len(delimiter) != 1):
            raise SchemaValidation(f"{ctx}.delimiter: must be a single character")
        markers = raw.get("null_markers", [""])
        if not isinstance(markers, list) or not all(isinstance(m, str) for m in markers):
            raise SchemaValidation(f"{ctx}.null_markers: must be a list of strings")
        sources.append(
            DataSourceSpec(
                name=name,
                path=_nonempty_str(_require(raw, "path", ctx), f"{ctx}.path"),
                format=fmt,
                delimiter=delimiter,
                null_markers=tuple(markers),
            )
        )
    schema_sources = {s.name: s for s in sources}
    headers = {s.name: _source_header(s, base_dir) for s in sources}

    namespace_modalities: dict[str, str] = {}
    for ns, modality in doc.get("namespaces", {}).items():
        namespace_modalities[_nonempty_str(ns, "namespaces key")] = _nonempty_str(
            modality, f"namespaces[{ns}]"
        )

    entity_types = []
    raw_types = _require(doc, "entity_types", "schema")
    if not raw_types:
        raise SchemaValidation("schema declares no entity types")
    for i, raw in enumerate(raw_types):
        ctx = f"entity_types[{i}]"
        source_name = _nonempty_str(_require(raw, "source", ctx), f"{ctx}.source")
        if source_name not in schema_sources:
            raise SchemaValidation(f"{ctx}.source: unknown source {source_name!r}")
        header = headers[source_name]
        namespace = _nonempty_str(_require(raw, "namespace", ctx), f"{ctx}.namespace")
        modality = _nonempty_str(_require(raw, "modality", ctx), f"{ctx}.modality")
        if namespace_modalities.setdefault(namespace, modality) != modality:
            raise SchemaValidation(
                f"{ctx}: namespace {namespace!r} already bound to modality "
                f"{namespace_modalities[namespace]!r}"
            )

        def check_column(col: str, where: str) -> str:
            if col not in header:
                raise SchemaValidation(
                    f"{where}: column {col!r} not in header of source {source_name!r} "
                    f"(columns: {header})"
                )
            return col

        id_column = check_column(
            _nonempty_str(_require(raw, "id_column", ctx), f"{ctx}.id_column"), f"{ctx}.id_column"
        )
        data_props = []
        for j, dp in enumerate(raw.get("data_properties", [])):
            dctx = f"{ctx}.data_properties[{j}]"
            data_props.append(
                DataPropertySpec(
                    relation=_nonempty_str(_require(dp, "relation", dctx), f"{dctx}.relation"),
                    column=check_column(
                        _nonempty_str(_require(dp, "column", dctx), f"{dctx}.column"), dctx
                    ),
                    modality=_nonempty_str(_require(dp, "modality", dctx), f"{dctx}.modality"),
                )
            )
        object_props = []
        for j, op in enumerate(raw.get("object_properties", [])):
            octx = f"{ctx}.object_properties[{j}]"
            object_props.append(
                ObjectPropertySpec(
                    relation=_nonempty_str(_require(op, "relation", octx), f"{octx}.relation"),
                    target_namespace=_nonempty_str(
                        _require(op, "target_namespace", octx), f"{octx}.target_namespace"
                    ),
                    target_column=check_column(
                        _nonempty_str(_require(op, "target_column", octx), f"{octx}.target_column"),
                        octx,
                    ),
                )
            )
        same_as = []
        for j, sa in enumerate(raw.get("same_as_links", [])):
            sctx = f"{ctx}.same_as_links[{j}]"
            same_as.append(
                SameAsSpec(
                    source_column=check_column(
                        _nonempty_str(_require(sa, "source_column", sctx), f"{sctx}.source_column"),
                        sctx,
                    ),
                    target_namespace=_nonempty_str(
                        _require(sa, "target_namespace", sctx), f"{sctx}.target_namespace"
                    ),
                    target_column=check_column(
                        _nonempty_str(_require(sa, "target_column", sctx), f"{sctx}.target_column"),
                        sctx,
                    ),
                )
            )
        entity_types.append(
            EntityTypeSpec(
                name=_nonempty_str(_require(raw, "name", ctx), f"{ctx}.name"),
                source=source_name,
                namespace=namespace,
                id_column=id_column,
                modality=modality,
                data_properties=tuple(data_props),
                object_properties=tuple(object_props),
                same_as_links=tuple(same_as),
            )
        )

    schema = Schema(tuple(sources), tuple(entity_types), namespace_modalities)
    # referenced target namespaces must resolve to a modality
    for et in schema.entity_types:
        for op in et.object_properties:
            if op.target_namespace not in namespace_modalities:
                raise SchemaValidation(
                    f"object property {op.relation!r}: namespace {op.target_namespace!r} has no "
                    f"declared modality (declare it under 'namespaces' or as an entity type)"
                )
        for sa in et.same_as_links:
            target_mod = namespace_modalities.get(sa.target_namespace)
            if target_mod is None:
                raise SchemaValidation(
                    f"sameAs link: namespace {sa.target_namespace!r} has no declared modality"
                )
            if target_mod != et.modality:
                raise SchemaValidation(
                    f"sameAs link from {et.namespace!r} ({et.modality!r}) to "
                    f"{sa.target_namespace!r} ({target_mod!r}) mixes modalities"
                )
    return schema


def _iter_rows(spec: DataSourceSpec, base_dir: Path):
    """Yield (line_number, row_dict | RowDecode message)."""
    path = base_dir / spec.path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SourceRead(f"cannot read source {spec.name!r} at {path}: {exc}") from None
    if spec.format == "delimited":
        reader = csv.reader(io.StringIO(text), delimiter=spec.delimiter)
        header: list[str] | None = None
        for lineno, row in enumerate(reader, start=1):
            if header is None:
                header = [c.strip() for c in row]
                continue
            if not row:
                continue
            if len(row) != len(header):
                yield lineno, f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                continue
            yield lineno, dict(zip(header, row))
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, f"{path}:{lineno}: bad JSON: {exc.msg}"
                continue
            if not isinstance(record, dict):
                yield lineno, f"{path}:{lineno}: row is not an object"
                continue
            yield lineno, record


def _is_null(value, markers: tuple[str, ...]) -> bool:
    if value is None:
        return True
    return isinstance(value, str) and value in markers


def build_graph(schema: Schema, base_dir: str | Path = ".") -> tuple[MultimodalGraph, BuildReport]:
    """Construct the graph declared by `schema`. Row-level problems are recorded in
    the report and the build continues; unreadable sources abort with SourceRead."""
    base_dir = Path(base_dir)
    graph = MultimodalGraph()
    report = BuildReport()
    for et in schema.entity_types:
        src = schema.source(et.source)
        markers = src.null_markers
        path = base_dir / src.path
        count = 0
        for lineno, row in _iter_rows(src, base_dir):
            if isinstance(row, str):
                report.errors.append(row)
                continue
            report.rows[src.name] = report.rows.get(src.name, 0) + 1
            raw_id = row.get(et.id_column)
            if _is_null(raw_id, markers):
                report.skipped_missing_id += 1
                continue
            subject = entity(et.namespace, str(raw_id), et.modality)
            graph.add_node(subject)
            count += 1
            for dp in et.data_properties:
                cell = row.get(dp.column)
                if _is_null(cell, markers):
                    continue
                if dp.modality == NUMBER_MODALITY:
                    try:
                        value = float(cell)
                    except (TypeError, ValueError):
                        report.errors.append(
                            f"{path}:{lineno}: {dp.column!r} is not a number: {cell!r}"
                        )
                        continue
                    if not math.isfinite(value):
                        report.errors.append(f"{path}:{lineno}: {dp.column!r} is not finite")
                        continue
                elif isinstance(cell, (int, float)) and not isinstance(cell, bool):
                    value = str(cell)
                elif isinstance(cell, str):
                    value = cell
                else:
                    report.errors.append(
                        f"{path}:{lineno}: {dp.column!r} has unsupported type {type(cell).__name__}"
                    )
                    continue
                graph.add_triple(
                    subject,
                    Relation(dp.relation, RelationKind.DATA),
                    attribute_node(dp.modality, value),
                )
            for op in et.object_properties:
                cell = row.get(op.target_column)
                if _is_null(cell, markers):
                    continue
                target = entity(
                    op.target_namespace, str(cell), schema.namespace_modalities[op.target_namespace]
                )
                graph.add_triple(subject, Relation(op.relation, RelationKind.OBJECT), target)
            for sa in et.same_as_links:
                left = row.get(sa.source_column)
                right = row.get(sa.target_column)
                if _is_null(left, markers) or _is_null(right, markers):
                    continue
                a = entity(et.namespace, str(left), et.modality)
                b = entity(
                    sa.target_namespace, str(right), schema.namespace_modalities[sa.target_namespace]
                )
                graph.add_triple(a, Relation(SAME_AS, RelationKind.OBJECT), b)
        report.entities[et.name] = report.entities.get(et.name, 0) + count
    return graph, report


# --- N-Triples ----------------------------------------------------------------

_META_VALUE = "ns://meta/value"
_META_MODALITY = "ns://meta/modality"
_FLOAT_TAG = "ns://meta/float"
_REL_PREFIX = "ns://rel/"

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _escape_literal(s: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in s)


def _unescape_literal(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\":
            if i + 1 >= len(s):
                raise ValueError("dangling escape")
            nxt = s[i + 1]
            mapped = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}.get(nxt)
            if mapped is None:
                raise ValueError(f"unknown escape \\{nxt}")
            out.append(mapped)
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _node_iri(node_id: NodeId) -> str:
    return f"ns://{quote(node_id.namespace, safe='')}/{quote(node_id.local_id, safe='')}"


def to_ntriples(graph: MultimodalGraph) -> str:
    """Serialize to the sorted N-Triples dialect described in the module docstring."""
    lines = []
    for triple in graph.triples():
        lines.append(
            f"<{_node_iri(triple.source)}> <{_REL_PREFIX}{quote(triple.relation.name, safe='')}> "
            f"<{_node_iri(triple.target)}> ."
        )
    for node in graph.nodes.values():
        iri = _node_iri(node.id)
        lines.append(f'<{iri}> <{_META_MODALITY}> "{_escape_literal(node.modality)}" .')
        if node.kind is NodeKind.ATTRIBUTE:
            if isinstance(node.value, float):
                lines.append(f'<{iri}> <{_META_VALUE}> "{node.value!r}"^^<{_FLOAT_TAG}> .')
            else:
                lines.append(f'<{iri}> <{_META_VALUE}> "{_escape_literal(node.value)}" .')
    if not lines:
        return ""
    return "\n".join(sorted(lines)) + "\n"


_LINE_RE = re.compile(
    r"^<([^<>\s]+)> <([^<>\s]+)> "
    r"(?:<([^<>\s]+)>|\"((?:[^\"\\]|\\.)*)\"(?:\^\^<([^<>\s]+)>)?) \.$"
)


def _parse_iri(iri: str, lineno: int) -> NodeId:
    if not iri.startswith("ns://"):
        raise NTriplesParse(f"line {lineno}: unsupported IRI scheme in {iri!r}")
    rest = iri[len("ns://") :]
    if "/" not in rest:
        raise NTriplesParse(f"line {lineno}: malformed node IRI {iri!r}")
    ns, local = rest.split("/", 1)
    if not ns or not local:
        raise NTriplesParse(f"line {lineno}: malformed node IRI {iri!r}")
    return NodeId(unquote(ns), unquote(local))


def parse_ntriples(text: str) -> MultimodalGraph:
    """Parse the dialect emitted by `to_ntriples`; inverse of it on triple sets."""
    modalities: dict[NodeId, str] = {}
    values: dict[NodeId, str | float] = {}
    edges: list[tuple[NodeId, str, NodeId, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if m is None:
            raise NTriplesParse(f"line {lineno}: malformed N-Triples line: {raw!r}")
        subject_iri, predicate_iri, object_iri, literal, datatype = m.groups()
        subject = _parse_iri(subject_iri, lineno)
        if predicate_iri == _META_MODALITY:
            if literal is None:
                raise NTriplesParse(f"line {lineno}: modality must be a literal")
            modalities[subject] = _unescape_literal(literal)
        elif predicate_iri == _META_VALUE:
            if literal is None:
                raise NTriplesParse(f"line {lineno}: value must be a literal")
            if datatype == _FLOAT_TAG:
                try:
                    values[subject] = float(literal)
                except ValueError:
                    raise NTriplesParse(f"line {lineno}: bad float literal {literal!r}") from None
            elif datatype is not None:
                raise NTriplesParse(f"line {lineno}: unknown literal datatype {datatype!r}")
            else:
                try:
                    values[subject] = _unescape_literal(literal)
                except ValueError as exc:
                    raise NTriplesParse(f"line {lineno}: {exc}") from None
        else:
            if not predicate_iri.startswith(_REL_PREFIX):
                raise NTriplesParse(f"line {lineno}: unknown predicate {predicate_iri!r}")
            if object_iri is None:
                raise NTriplesParse(f"line {lineno}: relation triple needs an IRI object")
            relation = unquote(predicate_iri[len(_REL_PREFIX) :])
            edges.append((subject, relation, _parse_iri(object_iri, lineno), lineno))

    graph = MultimodalGraph()

    def node_for(node_id: NodeId, lineno: int) -> Node:
        modality = modalities.get(node_id)
        if modality is None:
            raise NTriplesParse(f"line {lineno}: node {node_id} has no modality triple")
        if node_id in values:
            return Node(node_id, modality, NodeKind.ATTRIBUTE, values[node_id])
        return Node(node_id, modality, NodeKind.ENTITY)

    for node_id in modalities:
        graph.add_node(node_for(node_id, 0))
    for subject, relation, obj, lineno in edges:
        target = node_for(obj, lineno)
        kind = RelationKind.DATA if target.kind is NodeKind.ATTRIBUTE else RelationKind.OBJECT
        graph.add_triple(node_for(subject, lineno), Relation(relation, kind), target)
    return graph
