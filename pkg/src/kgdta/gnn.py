"""Inductive multi-relational graph encoder.

Per-modality linear projections bring attribute embeddings into a common space;
entities and categorical attributes start at zero. Two relational graph-convolution
layers then propagate messages along triples (treated as undirected labeled edges,
one weight matrix per relation plus a shared self-loop weight and a default weight
for relations unseen at fit time), averaging over neighbors per relation:

    h_{l+1}(v) = relu( W_self h_l(v) + sum_r mean_{u in N_r(v)} W_r h_l(u) + b )

A flow policy can restrict which relations may deliver messages into governed
entity modalities (e.g. proteins listen only to their sequence attribute), which
keeps pretraining consistent with inference-time inputs.

Encoding is computed over the scope's 2-hop closure only, so a node's embedding
depends on nothing outside its receptive field; out-of-scope neighbors at layers
>= 1 read from a historical store when one is provided (partitioned training).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import MissingProjection, MissingRelationWeight
from .graph import (
    CATEGORICAL,
    RDF_TYPE,
    MultimodalGraph,
    Node,
    NodeId,
    NodeKind,
    Relation,
    RelationKind,
    attribute_node,
    entity,
)
from .handlers import (
    EmbeddingTable,
    HandlerRegistry,
    SEQUENCE_MODALITY,
    SMILES_MODALITY,
    compute_initial_embeddings,
)
from .numerics import Tensor

CHECKPOINT_VERSION = 1

# entity modality -> (data relation, attribute modality) used by the inference API
INFER_DEFAULTS = {
    SMILES_MODALITY: ("smiles", "drug"),
    SEQUENCE_MODALITY: ("sequence", "protein"),
}


@dataclass(frozen=True)
class FlowPolicy:
    mode: str  # "unrestricted" | "controlled"
    allowed_inbound: dict[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("unrestricted", "controlled"):
            raise ValueError(f"unknown flow policy mode {self.mode!r}")
        if self.mode == "controlled":
            for modality, allowed in self.allowed_inbound.items():
                if not allowed:
                    raise ValueError(f"controlled policy has empty allowed set for {modality!r}")

    @staticmethod
    def unrestricted() -> "FlowPolicy":
        return FlowPolicy("unrestricted", {})

    @staticmethod
    def controlled(allowed: dict[str, set[str] | frozenset[str]] | None = None) -> "FlowPolicy":
        if allowed is None:
            allowed = {"protein": {"sequence"}, "drug": {"smiles"}}
        return FlowPolicy("controlled", {m: frozenset(v) for m, v in allowed.items()})

    def blocks(self, node: Node, relation: str) -> bool:
        if self.mode != "controlled" or node.kind is not NodeKind.ENTITY:
            return False
        allowed = self.allowed_inbound.get(node.modality)
        return allowed is not None and relation not in allowed


@dataclass
class RgcnLayer:
    w_self: Tensor
    bias: Tensor
    w_rel: dict[str, Tensor]
    w_default: Tensor

    def weight_for(self, relation: str) -> Tensor:
        w = self.w_rel.get(relation)
        if w is not None:
            return w
        if self.w_default is None:
            raise MissingRelationWeight(relation)
        return self.w_default


@dataclass
class GnnParams:
    projections: dict[str, tuple[Tensor, Tensor]]  # modality -> (W, b)
    layers: list[RgcnLayer]
    proj_dim: int = 64
    hidden_dim: int = 128
    out_dim: int = 128

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for modality in sorted(self.projections):
            w, b = self.projections[modality]
            named[f"proj/{modality}/w"] = w
            named[f"proj/{modality}/b"] = b
        for i, layer in enumerate(self.layers):
            named[f"layer{i}/self"] = layer.w_self
            named[f"layer{i}/bias"] = layer.bias
            named[f"layer{i}/default"] = layer.w_default
            for rel in sorted(layer.w_rel):
                named[f"layer{i}/rel/{rel}"] = layer.w_rel[rel]
        return named


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_gnn_params(
    modality_dims: dict[str, int],
    relations: list[str],
    rng: np.random.Generator,
    proj_dim: int = 64,
    hidden_dim: int = 128,
    out_dim: int = 128,
) -> GnnParams:
    """Fresh parameters for the given attribute modalities and relation vocabulary.

    Draws happen in sorted order, so identical inputs give identical parameters.
    """
    projections = {}
    for modality in sorted(modality_dims):
        dim = modality_dims[modality]
        projections[modality] = (
            nm.param(_glorot(rng, dim, proj_dim)),
            nm.param(np.zeros(proj_dim)),
        )
    layers = []
    dims = [proj_dim, hidden_dim, out_dim]
    for l in range(2):
        d_in, d_out = dims[l], dims[l + 1]
        layers.append(
            RgcnLayer(
                w_self=nm.param(_glorot(rng, d_in, d_out)),
                bias=nm.param(np.zeros(d_out)),
                w_rel={rel: nm.param(_glorot(rng, d_in, d_out)) for rel in sorted(relations)},
                w_default=nm.param(_glorot(rng, d_in, d_out)),
            )
        )
    return GnnParams(projections, layers, proj_dim, hidden_dim, out_dim)


class HistoricalStore:
    """Last-computed per-layer embeddings kept in host memory (partitioned training)."""

    def __init__(self, n_layers: int = 2):
        self.layers: list[dict[NodeId, np.ndarray]] = [{} for _ in range(n_layers)]

    def rows(self, layer: int, node_ids: list[NodeId], dim: int) -> np.ndarray:
        out = np.zeros((len(node_ids), dim), dtype=np.float64)
        store = self.layers[layer]
        for i, nid in enumerate(node_ids):
            vec = store.get(nid)
            if vec is not None:
                out[i] = vec
        return out

    def update(self, layer: int, node_ids: list[NodeId], values: np.ndarray):
        store = self.layers[layer]
        for i, nid in enumerate(node_ids):
            store[nid] = values[i].copy()


@dataclass
class MpGraph:
    """Message-passing structure for (graph, scope, policy): the scope's 2-hop
    closure in canonical (sorted NodeId) order, with per-relation dense adjacency
    already mean-normalized and flow-masked."""

    node_ids: list[NodeId]
    nodes: list[Node]
    index: dict[NodeId, int]
    scope_rows: np.ndarray
    out_rows: np.ndarray
    scope_ids: list[NodeId]
    out_ids: list[NodeId]
    adjacency: dict[str, np.ndarray]
    attr_rows: dict[str, np.ndarray]  # non-categorical attribute modality -> row indices


def build_mp(
    graph: MultimodalGraph,
    scope: set[NodeId] | list[NodeId] | None,
    policy: FlowPolicy,
    n_hops: int = 2,
) -> MpGraph:
    neighbors: dict[NodeId, set[NodeId]] = {nid: set() for nid in graph.nodes}
    pairs: dict[str, dict[tuple[NodeId, NodeId], None]] = {}
    for triple in graph.triples():
        if triple.relation.name == RDF_TYPE:
            continue
        rel_pairs = pairs.setdefault(triple.relation.name, {})
        rel_pairs[(triple.target, triple.source)] = None  # target receives from source
        rel_pairs[(triple.source, triple.target)] = None  # and vice versa
        neighbors[triple.source].add(triple.target)
        neighbors[triple.target].add(triple.source)

    if scope is None:
        closure = set(graph.nodes)
        scope_set = closure
    else:
        scope_set = set(scope)
        closure = set(scope_set)
        frontier = set(scope_set)
        for _ in range(n_hops):
            frontier = {u for v in frontier for u in neighbors[v]} - closure
            closure |= frontier

    node_ids = sorted(closure)
    nodes = [graph.nodes[nid] for nid in node_ids]
    index = {nid: i for i, nid in enumerate(node_ids)}
    n = len(node_ids)

    in_scope = np.array([nid in scope_set for nid in node_ids], dtype=bool)
    scope_rows = np.nonzero(in_scope)[0]
    out_rows = np.nonzero(~in_scope)[0]

    adjacency: dict[str, np.ndarray] = {}
    for rel in sorted(pairs):
        A = np.zeros((n, n), dtype=np.float64)
        recv, send = [], []
        for (v, u) in pairs[rel]:
            if v in index and u in index:
                recv.append(index[v])
                send.append(index[u])
        if not recv:
            continue
        recv = np.array(recv, dtype=np.intp)
        send = np.array(send, dtype=np.intp)
        deg = np.bincount(recv, minlength=n).astype(np.float64)
        A[recv, send] = 1.0 / deg[recv]
        for i, node in enumerate(nodes):
            if policy.blocks(node, rel):
                A[i, :] = 0.0
        adjacency[rel] = A

    attr_rows: dict[str, list[int]] = {}
    for i, node in enumerate(nodes):
        if node.kind is NodeKind.ATTRIBUTE and node.modality != CATEGORICAL:
            attr_rows.setdefault(node.modality, []).append(i)
    return MpGraph(
        node_ids=node_ids,
        nodes=nodes,
        index=index,
        scope_rows=scope_rows,
        out_rows=out_rows,
        scope_ids=[node_ids[i] for i in scope_rows],
        out_ids=[node_ids[i] for i in out_rows],
        adjacency=adjacency,
        attr_rows={m: np.array(r, dtype=np.intp) for m, r in sorted(attr_rows.items())},
    )


def encode_layers(
    mp: MpGraph,
    table: EmbeddingTable,
    params: GnnParams,
    history: HistoricalStore | None = None,
) -> list[Tensor]:
    """Forward pass. Returns per-layer tensors whose rows follow mp.scope_rows order
    for layers >= 1; layer 0 covers the whole closure."""
    n = len(mp.node_ids)
    pieces = []
    for modality, rows in mp.attr_rows.items():
        if modality not in params.projections:
            raise MissingProjection(modality)
        w, b = params.projections[modality]
        X = np.stack([table.get(mp.node_ids[i]) for i in rows])
        pieces.append((rows, nm.add(nm.matmul(nm.constant(X), w), b)))
    h_full = nm.assemble_rows(n, params.proj_dim, pieces)

    outputs: list[Tensor] = [h_full]
    dims = [params.proj_dim, params.hidden_dim, params.out_dim]
    h_scope: Tensor | None = None
    for l, layer in enumerate(params.layers):
        if l > 0:
            fill = [(mp.scope_rows, h_scope)]
            if len(mp.out_rows):
                hist = (
                    history.rows(l - 1, mp.out_ids, dims[l])
                    if history is not None
                    else np.zeros((len(mp.out_rows), dims[l]))
                )
                fill.append((mp.out_rows, hist))
            h_full = nm.assemble_rows(n, dims[l], fill)
        z = nm.matmul(h_full, layer.w_self)
        for rel in sorted(mp.adjacency):
            msg = nm.matmul(nm.matmul(nm.constant(mp.adjacency[rel]), h_full), layer.weight_for(rel))
            z = nm.add(z, msg)
        h_next_full = nm.relu(nm.add(z, layer.bias))
        h_scope = nm.gather_rows(h_next_full, mp.scope_rows)
        outputs.append(h_scope)
    return outputs


def encode(
    graph: MultimodalGraph,
    initial: EmbeddingTable,
    params: GnnParams,
    policy: FlowPolicy | None = None,
    history: HistoricalStore | None = None,
    scope: set[NodeId] | list[NodeId] | None = None,
) -> dict[NodeId, np.ndarray]:
    """Embed the scope nodes (default: all) given initial embeddings and parameters."""
    policy = policy or FlowPolicy.unrestricted()
    mp = build_mp(graph, scope, policy, n_hops=len(params.layers))
    final = encode_layers(mp, initial, params, history)[-1]
    return {nid: final.data[i].copy() for i, nid in enumerate(mp.scope_ids)}


def infer(
    params: GnnParams,
    policy: FlowPolicy,
    value: str,
    modality: str,
    registry: HandlerRegistry,
    relation: str | None = None,
    entity_modality: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Embed a brand-new sequence/SMILES: returns (initial vector, encoder vector).

    Builds a two-node micro-graph (fresh entity plus one attribute) and encodes it;
    works for values never seen in training because the encoder is inductive.
    """
    defaults = INFER_DEFAULTS.get(modality)
    if relation is None or entity_modality is None:
        if defaults is None:
            raise ValueError(
                f"no inference defaults for modality {modality!r}; pass relation= and entity_modality="
            )
        relation = relation or defaults[0]
        entity_modality = entity_modality or defaults[1]

    micro = MultimodalGraph()
    subject = entity("query", "q", entity_modality)
    attr = attribute_node(modality, value)
    micro.add_triple(subject, Relation(relation, RelationKind.DATA), attr)
    table = compute_initial_embeddings(micro, registry, entity_dim=params.proj_dim)
    out = encode(micro, table, params, policy, scope=[subject.id])
    return table.get(attr.id).copy(), out[subject.id]


# --- parameter (de)serialization --------------------------------------------------


def params_to_dict(params: GnnParams) -> dict:
    return {
        "dims": [params.proj_dim, params.hidden_dim, params.out_dim],
        "projections": {
            m: {"w": w.data.tolist(), "b": b.data.tolist()}
            for m, (w, b) in sorted(params.projections.items())
        },
        "layers": [
            {
                "self": layer.w_self.data.tolist(),
                "bias": layer.bias.data.tolist(),
                "default": layer.w_default.data.tolist(),
                "relations": {r: w.data.tolist() for r, w in sorted(layer.w_rel.items())},
            }
            for layer in params.layers
        ],
    }


def params_from_dict(doc: dict) -> GnnParams:
    proj_dim, hidden_dim, out_dim = doc["dims"]
    projections = {
        m: (nm.param(np.array(p["w"])), nm.param(np.array(p["b"])))
        for m, p in doc["projections"].items()
    }
    layers = [
        RgcnLayer(
            w_self=nm.param(np.array(raw["self"])),
            bias=nm.param(np.array(raw["bias"])),
            w_rel={r: nm.param(np.array(w)) for r, w in raw["relations"].items()},
            w_default=nm.param(np.array(raw["default"])),
        )
        for raw in doc["layers"]
    ]
    return GnnParams(projections, layers, proj_dim, hidden_dim, out_dim)


def policy_to_dict(policy: FlowPolicy) -> dict:
    return {
        "mode": policy.mode,
        "allowed_inbound": {m: sorted(v) for m, v in sorted(policy.allowed_inbound.items())},
    }


def policy_from_dict(doc: dict) -> FlowPolicy:
    return FlowPolicy(doc["mode"], {m: frozenset(v) for m, v in doc["allowed_inbound"].items()})
