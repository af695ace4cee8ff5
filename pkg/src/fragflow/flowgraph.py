"""Information-flow graphs between a brain's T0 nodes and its T1 nodes.

For every T1 node, the minimal sets of T0 nodes that predict it are found
by fragmentation search.  Nodes shared by all of those sets are linked in
black (necessary); nodes present in only some of them are linked in red.

Node bit annotations are a reconstruction: ``bits_received`` is the
entropy of a node at T1, ``bits_delivered`` the entropy at T0 of a node that
has outgoing links.
"""
from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

from .fragmentation import MEET_TOL, SubsetScorer, Threshold, _feature_context
from .infotheory import StateTable, UsageError, entropy, mutual_information

ROLE_PREFIX = {"i": "input", "m": "memory", "o": "output"}


def node_role(node_id: str) -> str:
    """Role from a node id such as ``i0``, ``m3`` or ``o1``."""
    role = ROLE_PREFIX.get(node_id[:1])
    if role is None:
        raise UsageError(f"cannot infer role of node {node_id!r}")
    return role


def _minimal_partitions(scorer, fcode, fcard, h_f, thr, allowed):
    accepted: list = []
    for size in range(1, len(allowed) + 1):
        for combo in combinations(allowed, size):
            if any(set(a) <= set(combo) for a in accepted):
                continue
            if scorer.shared(combo, fcode, fcard, h_f) >= thr - MEET_TOL:
                accepted.append(combo)
    return accepted


def unique_minimal_partitions(table: StateTable, feature: Sequence[int],
                              elements: Sequence[Sequence[int]],
                              threshold: Threshold = Threshold(),
                              allowed: Sequence[int] | None = None) -> list:
    """All threshold-meeting element subsets that contain no accepted subset.

    Candidates are visited by ascending size, lexicographically within a
    size.  ``allowed`` (element positions) restricts candidates, e.g. to
    elements structurally wired to the feature; the threshold is still
    resolved against the full element set.  Returns tuples of element
    positions.
    """
    scorer = SubsetScorer(table, elements)
    fcode, fcard, h_f, total = _feature_context(scorer, feature)
    if threshold.mode == "fraction" and (h_f == 0.0 or total <= 0.0):
        return []
    thr = threshold.resolve(total)
    allowed = (list(range(scorer.n)) if allowed is None
               else sorted(set(int(a) for a in allowed)))
    return _minimal_partitions(scorer, fcode, fcard, h_f, thr, allowed)


@dataclass
class Node:
    id: str
    role: str
    bits_received: float = 0.0
    bits_delivered: float = 0.0


@dataclass
class Link:
    source: str
    target: str
    color: str
    weight: float


@dataclass
class FlowGraph:
    nodes: list = field(default_factory=list)
    links: list = field(default_factory=list)
    # Minimal predicting partitions per target node, by source node ids.
    partitions: dict = field(default_factory=dict)

    @property
    def complexity(self) -> int:
        return len(self.links)

    def to_dict(self) -> dict:
        return {
            "nodes": [asdict(n) for n in self.nodes],
            "links": [asdict(k) for k in self.links],
            "partitions": {t: [list(p) for p in ps]
                           for t, ps in self.partitions.items()},
            "complexity": self.complexity,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "FlowGraph":
        return cls(nodes=[Node(**n) for n in d["nodes"]],
                   links=[Link(**k) for k in d["links"]],
                   partitions={t: [tuple(p) for p in ps]
                               for t, ps in d.get("partitions", {}).items()})


def flow_complexity(graph: FlowGraph) -> int:
    """Number of links, red ones included."""
    return len(graph.links)


def classify_links(partitions: Sequence[Sequence]) -> dict:
    """Map each source in ``partitions`` to ``"black"`` or ``"red"``.

    A single partition makes every member black; with several, members of
    all of them are black and the rest red.
    """
    if not partitions:
        return {}
    common = set(partitions[0]).intersection(*map(set, partitions[1:]))
    members = sorted(set().union(*map(set, partitions)))
    return {m: ("black" if m in common else "red") for m in members}


def _target_links(args):
    (table, target, t1_col, t0_ids, t0_cols, wired, threshold) = args
    elements = [(c,) for c in t0_cols]
    scorer = SubsetScorer(table, elements)
    fcode, fcard, h_f, total = _feature_context(scorer, (t1_col,))
    if h_f == 0.0:
        return target, [], []
    if threshold.mode == "fraction" and total <= 0.0:
        return target, [], []
    thr = threshold.resolve(total)
    allowed = [k for k, nid in enumerate(t0_ids)
               if wired is None or nid in wired]
    parts = _minimal_partitions(scorer, fcode, fcard, h_f, thr, allowed)
    named = [tuple(t0_ids[k] for k in p) for p in parts]
    links = []
    colors = classify_links(named)
    for src in t0_ids:
        if src not in colors:
            continue
        k = t0_ids.index(src)
        w = mutual_information(table, (t0_cols[k],), (t1_col,)) / h_f
        links.append(Link(src, target, colors[src], min(w, 1.0)))
    return target, links, named


def build_flow_graph(table: StateTable, t1_features: Mapping[str, str],
                     t0_elements: Mapping[str, str],
                     connectome: set | None = None,
                     threshold: Threshold = Threshold(),
                     window: float | None = None,
                     lifetime_column: str = "lifetime",
                     workers: int = 1) -> FlowGraph:
    """Derive the flow graph from a state trace.

    ``t1_features`` and ``t0_elements`` map node ids (``o0``, ``m3``, ``i1``)
    to table column names.  ``connectome`` is a set of ``(source, target)``
    node-id pairs; partitions using an unwired source are dropped.
    ``window`` keeps only the trailing fraction of each lifetime, grouped by
    ``lifetime_column``.
    """
    if window is not None:
        from .tasks import window_mask
        if lifetime_column not in table.names:
            raise UsageError(f"windowing needs a {lifetime_column!r} column")
        lifetimes = table.rows[:, table.names.index(lifetime_column)]
        table = table.select_rows(window_mask(lifetimes, window))

    t0_ids = list(t0_elements)
    t0_cols = [table.names.index(t0_elements[n]) for n in t0_ids]
    jobs = []
    for target, col_name in t1_features.items():
        wired = None
        if connectome is not None:
            wired = {s for s, t in connectome if t == target}
        jobs.append((table, target, table.names.index(col_name), t0_ids,
                     t0_cols, wired, threshold))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_target_links, jobs))
    else:
        results = [_target_links(j) for j in jobs]

    graph = FlowGraph()
    sources = set()
    for target, links, named in results:
        graph.links.extend(links)
        graph.partitions[target] = named
        sources.update(k.source for k in links)

    ids = list(dict.fromkeys(t0_ids + list(t1_features)))
    for nid in ids:
        node = Node(nid, node_role(nid))
        if nid in t1_features:
            node.bits_received = entropy(table, table.index(t1_features[nid]))
        if nid in sources:
            node.bits_delivered = entropy(table, table.index(t0_elements[nid]))
        graph.nodes.append(node)
    return graph


# -- DOT output --------------------------------------------------------------

_ROLE_STYLE = {
    "input": 'shape=circle, style=filled, fillcolor="palegreen"',
    "memory": 'shape=circle, style=filled, fillcolor="white"',
    "output": 'shape=circle, style=filled, fillcolor="lightblue"',
}


def _node_label(node: Node) -> str:
    parts = []
    if node.bits_received > 0:
        parts.append(f"..{node.bits_received:.2f}")
    parts.append(node.id)
    if node.bits_delivered > 0:
        parts.append(f"{node.bits_delivered:.2f}..")
    return "\\n".join(parts)


def emit_dot(graph: FlowGraph, name: str = "flow") -> str:
    """Render ``graph`` as a Graphviz digraph.

    Node fill encodes role; T1 nodes with no entropy are grey.  Edge color
    is the link class, and label and pen width carry the weight.
    """
    lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
    for node in graph.nodes:
        style = _ROLE_STYLE[node.role]
        if node.role != "input" and node.bits_received == 0:
            style = 'shape=circle, style=filled, fillcolor="grey"'
        lines.append(f'  "{node.id}" [{style}, label="{_node_label(node)}"];')
    for link in graph.links:
        width = 1.0 + 3.0 * link.weight
        lines.append(
            f'  "{link.source}" -> "{link.target}" [color="{link.color}", '
            f'label="{link.weight:.2f}", penwidth={width:.2f}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def check_dot(text: str) -> None:
    """Minimal grammar check for the DOT subset :func:`emit_dot` produces.

    Raises ``ValueError`` on the first malformed statement.
    """
    ident = r'"[^"\\]*(?:\\.[^"\\]*)*"|[A-Za-z_][A-Za-z0-9_]*'
    attr = rf'(?:{ident})\s*=\s*(?:{ident}|-?\d+(?:\.\d+)?)'
    attrs = rf'\[\s*(?:{attr})(?:\s*,\s*{attr})*\s*\]'
    node_stmt = re.compile(rf'^(?:{ident})\s*(?:{attrs})?\s*;$')
    edge_stmt = re.compile(rf'^(?:{ident})\s*->\s*(?:{ident})\s*(?:{attrs})?\s*;$')
    graph_attr = re.compile(rf'^{attr}\s*;$')

    lines = [ln.strip() for ln in text.strip().splitlines()]
    if not lines or not re.match(rf'^(?:strict\s+)?digraph\s*(?:{ident})?\s*\{{$',
                                 lines[0]):
        raise ValueError("missing digraph header")
    if lines[-1] != "}":
        raise ValueError("missing closing brace")
    for ln in lines[1:-1]:
        if edge_stmt.match(ln) or node_stmt.match(ln):
            continue
        if graph_attr.match(ln):
            continue
        raise ValueError(f"bad DOT statement: {ln}")
    if text.count("{") != text.count("}"):
        raise ValueError("unbalanced braces")
