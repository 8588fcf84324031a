"""Semantic jaw graph: tooth nodes, layouts, and typed relation edges."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEATURE_DIM = 16
RELATIONS = ("Neighbor", "Symmetry", "Arch")
LAYOUT_FIELDS = ("x", "y", "z", "h", "w", "l", "k", "r")
JAW_SIDES = ("upper", "lower")

# quadrants walked along the arch, patient's right side first
_ARCH_QUADRANTS = {"upper": (1, 2), "lower": (4, 3)}
_MIRROR_QUADRANT = {1: 2, 2: 1, 3: 4, 4: 3}


class ValidationError(ValueError):
    """Raised for malformed jaw graphs or unknown tooth codes."""


class SchemaError(ValueError):
    """Raised by :func:`deserialize` with the offending location."""


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class ToothLayout:
    """Pose and box extents of one tooth (mm, radians).

    ``w`` runs along the arch tangent, ``l`` bucco-lingually and ``h``
    occluso-gingivally. ``k`` rotates about the vertical axis, ``r`` tilts
    about the tooth's mesio-distal axis.
    """

    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    k: float
    r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.h, self.w, self.l, self.k, self.r])

    @classmethod
    def from_array(cls, v) -> "ToothLayout":
        v = [float(t) for t in v]
        if len(v) != 8:
            raise ValueError(f"layout needs 8 components, got {len(v)}")
        return cls(*v)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def half_extents(self) -> np.ndarray:
        # local axes: x = tangent (w), y = bucco-lingual (l), z = vertical (h)
        return 0.5 * np.array([self.w, self.l, self.h])

    def rotation(self) -> np.ndarray:
        return layout_rotation(self.k, self.r)


def layout_rotation(k: float, r: float) -> np.ndarray:
    """Local-to-world rotation ``Rz(k) @ Rx(r)``."""
    ck, sk = math.cos(k), math.sin(k)
    cr, sr = math.cos(r), math.sin(r)
    rz = np.array([[ck, -sk, 0.0], [sk, ck, 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ rx


@dataclass(frozen=True)
class ToothNode:
    tooth_id: int
    layout: Optional[ToothLayout] = None
    features: tuple = field(default_factory=lambda: (0.0,) * FEATURE_DIM)
    missing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(f) for f in self.features))


@dataclass(frozen=True)
class JawEdge:
    src: int
    dst: int
    relation: str


@dataclass(frozen=True)
class JawGraph:
    nodes: tuple
    edges: tuple
    jaw_side: str

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    def index_of(self, tooth_id: int) -> int:
        for i, n in enumerate(self.nodes):
            if n.tooth_id == tooth_id:
                return i
        raise KeyError(tooth_id)

    @property
    def tooth_ids(self) -> list:
        return [n.tooth_id for n in self.nodes]

    def missing_ids(self) -> list:
        return [n.tooth_id for n in self.nodes if n.missing]

    def decompose(self):
        """Return the (categories, layouts, features, edges) tuple."""
        cats = [n.tooth_id for n in self.nodes]
        lays = [n.layout for n in self.nodes]
        feats = np.array([n.features for n in self.nodes], dtype=float).reshape(len(self.nodes), FEATURE_DIM)
        return cats, lays, feats, list(self.edges)

    def replace_nodes(self, nodes) -> "JawGraph":
        return JawGraph(nodes=tuple(nodes), edges=self.edges, jaw_side=self.jaw_side)


# --------------------------------------------------------------------------
# FDI helpers


def fdi_sequence(jaw_side: str, max_position: int = 8) -> list:
    """Full FDI arch sequence for one jaw, patient right to left."""
    if jaw_side not in JAW_SIDES:
        raise ValidationError(f"invalid jaw side {jaw_side!r}")
    qa, qb = _ARCH_QUADRANTS[jaw_side]
    right = [qa * 10 + p for p in range(max_position, 0, -1)]
    left = [qb * 10 + p for p in range(1, max_position + 1)]
    return right + left


def is_valid_fdi(code: int, jaw_side: Optional[str] = None) -> bool:
    if not isinstance(code, (int, np.integer)) or isinstance(code, bool):
        return False
    q, p = divmod(int(code), 10)
    if q not in (1, 2, 3, 4) or not 1 <= p <= 8:
        return False
    if jaw_side is not None:
        return q in _ARCH_QUADRANTS.get(jaw_side, ())
    return True


def mirror_fdi(code: int) -> int:
    q, p = divmod(code, 10)
    return _MIRROR_QUADRANT[q] * 10 + p


def category_index(code: int) -> int:
    """Map an FDI code to a class index in [0, 32)."""
    q, p = divmod(code, 10)
    return (q - 1) * 8 + (p - 1)


def arch_position(code: int, jaw_side: str) -> int:
    seq = fdi_sequence(jaw_side)
    try:
        return seq.index(code)
    except ValueError:
        raise ValidationError(f"invalid FDI code {code}") from None


# --------------------------------------------------------------------------
# operations


def arch_order(graph: JawGraph) -> list:
    """Node indices sorted along the dental arch (right to left)."""
    return _arch_order(graph.nodes, graph.jaw_side)


def _arch_order(nodes: Sequence[ToothNode], jaw_side: str) -> list:
    keyed = []
    for i, n in enumerate(nodes):
        if not is_valid_fdi(n.tooth_id, jaw_side):
            raise ValidationError(f"invalid FDI code {n.tooth_id}")
        keyed.append((arch_position(n.tooth_id, jaw_side), i))
    return [i for _, i in sorted(keyed)]


def build_edges(nodes: Sequence[ToothNode], jaw_side: str) -> list:
    """Neighbor, Symmetry and Arch edges, canonically ordered.

    Undirected relations are stored once with ``src`` earlier on the arch.
    Arch edges link every non-central tooth to the two most central teeth in
    the record; the two centrals are not Arch-linked to each other.
    """
    order = _arch_order(nodes, jaw_side)
    pos = {i: arch_position(nodes[i].tooth_id, jaw_side) for i in order}
    by_code = {nodes[i].tooth_id: i for i in order}
    if len(by_code) != len(order):
        raise ValidationError("duplicate tooth_id")

    def canon(a, b, rel):
        return JawEdge(a, b, rel) if pos[a] < pos[b] else JawEdge(b, a, rel)

    edges = []
    for a, b in zip(order[:-1], order[1:]):
        edges.append(canon(a, b, "Neighbor"))
    for i in order:
        code = nodes[i].tooth_id
        m = mirror_fdi(code)
        if m in by_code and pos[i] < pos[by_code[m]]:
            edges.append(canon(i, by_code[m], "Symmetry"))
    centrals = sorted(order, key=lambda i: (nodes[i].tooth_id % 10, pos[i]))[:2]
    if len(order) > 2:
        for i in order:
            if i in centrals:
                continue
            for c in sorted(centrals, key=lambda j: pos[j]):
                edges.append(canon(i, c, "Arch"))
    rel_rank = {r: n for n, r in enumerate(RELATIONS)}
    edges.sort(key=lambda e: (rel_rank[e.relation], pos[e.src], pos[e.dst]))
    return edges


def make_graph(nodes: Sequence[ToothNode], jaw_side: str) -> JawGraph:
    """Build a graph with canonical edges from nodes."""
    return JawGraph(nodes=tuple(nodes), edges=tuple(build_edges(nodes, jaw_side)), jaw_side=jaw_side)


def edge_set(graph: JawGraph) -> set:
    """Edges keyed by tooth codes, independent of node order."""
    ids = graph.tooth_ids
    return {(ids[e.src], ids[e.dst], e.relation) for e in graph.edges}


def validate(graph: JawGraph) -> list:
    """Return every invariant violation (empty list means ok)."""
    out = []
    if graph.jaw_side not in JAW_SIDES:
        out.append(f"invalid jaw_side {graph.jaw_side!r}")
    seen = set()
    for i, n in enumerate(graph.nodes):
        if not is_valid_fdi(n.tooth_id, graph.jaw_side if graph.jaw_side in JAW_SIDES else None):
            out.append(f"node {i}: invalid FDI code {n.tooth_id}")
        if n.tooth_id in seen:
            out.append(f"node {i}: duplicate tooth_id {n.tooth_id}")
        seen.add(n.tooth_id)
        if len(n.features) != FEATURE_DIM:
            out.append(f"node {i}: features must have length {FEATURE_DIM}")
        elif not all(math.isfinite(f) for f in n.features):
            out.append(f"node {i}: non-finite feature")
        if n.missing != (n.layout is None):
            out.append(f"node {i}: missing flag disagrees with layout presence")
        if n.layout is not None:
            lay = n.layout
            vals = lay.as_array()
            if not np.all(np.isfinite(vals)):
                out.append(f"node {i}: non-finite layout")
            if min(lay.h, lay.w, lay.l) <= 0:
                out.append(f"node {i}: non-positive extent")
            for name in ("k", "r"):
                a = getattr(lay, name)
                if not (-math.pi < a <= math.pi):
                    out.append(f"node {i}: angle {name}={a} outside (-pi, pi]")
    n_nodes = len(graph.nodes)
    triples = set()
    for j, e in enumerate(graph.edges):
        if e.relation not in RELATIONS:
            out.append(f"edge {j}: unknown relation {e.relation!r}")
        if not (0 <= e.src < n_nodes and 0 <= e.dst < n_nodes):
            out.append(f"edge {j}: endpoint out of range")
            continue
        if e.src == e.dst:
            out.append(f"edge {j}: self-edge")
        key = (e.src, e.dst, e.relation)
        if key in triples:
            out.append(f"edge {j}: duplicate edge")
        triples.add(key)
    return out


# --------------------------------------------------------------------------
# JSON


def to_dict(graph: JawGraph) -> dict:
    return {
        "jaw_side": graph.jaw_side,
        "nodes": [
            {
                "tooth_id": int(n.tooth_id),
                "layout": None if n.layout is None else {f: float(getattr(n.layout, f)) for f in LAYOUT_FIELDS},
                "features": [float(f) for f in n.features],
                "missing": bool(n.missing),
            }
            for n in graph.nodes
        ],
        "edges": [{"src": int(e.src), "dst": int(e.dst), "relation": e.relation} for e in graph.edges],
    }


def serialize(graph: JawGraph) -> str:
    problems = validate(graph)
    if problems:
        raise ValidationError("; ".join(problems))
    # repr-based float output round-trips float64 exactly
    return json.dumps(to_dict(graph), indent=1) + "\n"


def _need(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}: missing {key!r}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise SchemaError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
    return val


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where}: expected number")
    return float(v)


def from_dict(doc) -> JawGraph:
    if not isinstance(doc, dict):
        raise SchemaError("top level: expected object")
    side = _need(doc, "jaw_side", "top level", str)
    raw_nodes = _need(doc, "nodes", "top level", list)
    raw_edges = _need(doc, "edges", "top level", list)
    nodes = []
    for i, rn in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        tid = _need(rn, "tooth_id", where)
        if isinstance(tid, bool) or not isinstance(tid, int):
            raise SchemaError(f"{where}.tooth_id: expected integer")
        raw_layout = _need(rn, "layout", where)
        layout = None
        if raw_layout is not None:
            if not isinstance(raw_layout, dict):
                raise SchemaError(f"{where}.layout: expected object or null")
            layout = ToothLayout(*(_num(_need(raw_layout, f, f"{where}.layout"), f"{where}.layout.{f}") for f in LAYOUT_FIELDS))
        feats = _need(rn, "features", where, list)
        if len(feats) != FEATURE_DIM:
            raise SchemaError(f"{where}.features: expected {FEATURE_DIM} values, got {len(feats)}")
        feats = tuple(_num(f, f"{where}.features") for f in feats)
        missing = rn.get("missing", layout is None) if isinstance(rn, dict) else None
        if not isinstance(missing, bool):
            raise SchemaError(f"{where}.missing: expected bool")
        if layout is None:
            missing = True
        nodes.append(ToothNode(tooth_id=tid, layout=layout, features=feats, missing=missing))
    edges = []
    for j, re_ in enumerate(raw_edges):
        where = f"edges[{j}]"
        src = _need(re_, "src", where, int)
        dst = _need(re_, "dst", where, int)
        rel = _need(re_, "relation", where, str)
        if rel not in RELATIONS:
            raise SchemaError(f"{where}.relation: unknown relation {rel!r}")
        edges.append(JawEdge(src, dst, rel))
    return JawGraph(nodes=tuple(nodes), edges=tuple(edges), jaw_side=side)


def deserialize(text: str) -> JawGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(doc)


def load(path) -> JawGraph:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())


def save(graph: JawGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(graph))
