"""Stochastic process maps: thresholded transition graphs and difference graphs.

Edges below ``minimum`` are dropped, edges in ``[minimum, cut)`` are kept but
faded, and the rest are drawn normally. Graphs export to DOT and JSON.

DOT conventions
---------------
* nodes are emitted in alphabet order; the graph carries ``start=1`` so that
  layout engines seeding from it are deterministic;
* each node has ``initial`` (full precision) and an ``xlabel`` with the
  initial probability to 2 decimals;
* normal edges: ``style="solid"`` and ``penwidth`` scaled by probability;
  faded edges: ``style="dashed"``, ``penwidth=0.5`` and a translucent color;
* edge labels show probabilities rounded to 2 decimals;
* difference edges are blue (positive) or red (negative).
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ModelError, ThresholdError
from .markov import MarkovModel, estimate_mm, seqtrate, transition_counts
from .mixture import MixtureModel
from .seqdata import SequenceSet

__all__ = [
    "DiffEdge",
    "DiffGraph",
    "Edge",
    "Node",
    "ProcessGraph",
    "build_process_graph",
    "cluster_process_maps",
    "diff_graph",
    "group_models",
    "group_transition_counts",
    "seqtrate",
]


@dataclass(frozen=True)
class Node:
    label: str
    initial: float | None = None
    color: str | None = None


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    p: float
    faded: bool


@dataclass(frozen=True)
class ProcessGraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    cut: float
    minimum: float
    title: str = ""

    def edge_set(self) -> set[tuple[str, str]]:
        return {(e.source, e.target) for e in self.edges}

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "nodes": [{"label": n.label, "initial": n.initial, "color": n.color} for n in self.nodes],
            "edges": [{"from": e.source, "to": e.target, "p": e.p, "faded": e.faded} for e in self.edges],
            "thresholds": {"cut": self.cut, "minimum": self.minimum},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "ProcessGraph":
        nodes = tuple(Node(n["label"], n.get("initial"), n.get("color")) for n in d["nodes"])
        edges = tuple(Edge(e["from"], e["to"], float(e["p"]), bool(e["faded"])) for e in d["edges"])
        th = d["thresholds"]
        return cls(nodes, edges, float(th["cut"]), float(th["minimum"]), d.get("title", ""))

    @classmethod
    def from_json(cls, text: str) -> "ProcessGraph":
        return cls.from_dict(json.loads(text))

    def to_dot(self, name: str = "process") -> str:
        lines = [f"digraph {_quote(self.title or name)} {{", "  graph [start=1, overlap=false];",
                 "  node [shape=circle, style=filled];"]
        for n in self.nodes:
            attrs = {"label": n.label}
            if n.initial is not None:
                attrs["initial"] = repr(float(n.initial))
                attrs["xlabel"] = f"{n.initial:.2f}"
            if n.color:
                attrs["fillcolor"] = n.color
            lines.append(f"  {_quote(n.label)} [{_attrs(attrs)}];")
        for e in self.edges:
            attrs = {"label": f"{e.p:.2f}", "weight": repr(float(e.p))}
            if e.faded:
                attrs.update(style="dashed", penwidth="0.5", color="#00000055")
            else:
                attrs.update(style="solid", penwidth=f"{1 + 4 * e.p:.2f}", color="#000000")
            lines.append(f"  {_quote(e.source)} -> {_quote(e.target)} [{_attrs(attrs)}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DiffEdge:
    source: str
    target: str
    weight: float

    @property
    def sign(self) -> str:
        return "positive" if self.weight > 0 else "negative"


@dataclass(frozen=True)
class DiffGraph:
    """Signed edge differences ``b - a`` between two transition matrices."""

    labels: tuple[str, ...]
    edges: tuple[DiffEdge, ...]
    minimum: float
    colors: tuple[str, ...] | None = field(default=None)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"label": x} for x in self.labels],
            "edges": [{"from": e.source, "to": e.target, "weight": e.weight, "sign": e.sign} for e in self.edges],
            "thresholds": {"minimum": self.minimum},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_dot(self, name: str = "difference") -> str:
        lines = [f"digraph {_quote(name)} {{", "  graph [start=1, overlap=false];",
                 "  node [shape=circle, style=filled];"]
        for i, lab in enumerate(self.labels):
            attrs = {"label": lab}
            if self.colors:
                attrs["fillcolor"] = self.colors[i]
            lines.append(f"  {_quote(lab)} [{_attrs(attrs)}];")
        for e in self.edges:
            attrs = {
                "label": f"{e.weight:.2f}",
                "weight": repr(abs(float(e.weight))),
                "color": "#0000FF" if e.weight > 0 else "#FF0000",
                "penwidth": f"{1 + 8 * abs(e.weight):.2f}",
                "sign": e.sign,
            }
            lines.append(f"  {_quote(e.source)} -> {_quote(e.target)} [{_attrs(attrs)}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _quote(x: str) -> str:
    return '"' + str(x).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _attrs(d: dict) -> str:
    return ", ".join(f"{k}={_quote(v)}" for k, v in d.items())


def _check_thresholds(cut: float, minimum: float) -> None:
    if not 0 <= minimum <= cut <= 1:
        raise ThresholdError(f"thresholds must satisfy 0 <= minimum <= cut <= 1 (got minimum={minimum}, cut={cut})")


def build_process_graph(
    transitions: np.ndarray,
    initial: np.ndarray | None = None,
    cut: float = 0.15,
    minimum: float = 0.05,
    labels: Sequence[str] | None = None,
    colors: Sequence[str] | None = None,
    title: str = "",
) -> ProcessGraph:
    """Thresholded transition graph with optional initial-probability node annotations."""
    _check_thresholds(cut, minimum)
    t = np.asarray(transitions, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ModelError("transition matrix must be square")
    m = t.shape[0]
    labels = tuple(labels) if labels is not None else tuple(str(i + 1) for i in range(m))
    if len(labels) != m:
        raise ModelError(f"{len(labels)} labels for a {m} x {m} matrix")
    if initial is not None:
        initial = np.asarray(initial, dtype=float)
        if initial.shape != (m,) or (initial < 0).any() or (initial > 1).any():
            raise ModelError("initial probabilities must be a length-M vector in [0, 1]")
    nodes = tuple(
        Node(labels[i], None if initial is None else float(initial[i]), colors[i] if colors else None)
        for i in range(m)
    )
    edges = tuple(
        Edge(labels[r], labels[c], float(t[r, c]), bool(t[r, c] < cut))
        for r in range(m)
        for c in range(m)
        if t[r, c] >= minimum
    )
    return ProcessGraph(nodes, edges, float(cut), float(minimum), title)


def model_process_graph(model: MarkovModel, cut: float = 0.15, minimum: float = 0.05, title: str = "") -> ProcessGraph:
    return build_process_graph(model.transitions, model.initial, cut, minimum, model.alphabet.symbols,
                               model.alphabet.colors, title)


def diff_graph(a: np.ndarray, b: np.ndarray, minimum: float = 0.05, labels: Sequence[str] | None = None,
               colors: Sequence[str] | None = None) -> DiffGraph:
    """Edges ``b - a`` whose absolute difference is at least ``minimum``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"matrices must be square and of equal shape, got {a.shape} and {b.shape}")
    if minimum < 0:
        raise ThresholdError("minimum must be non-negative")
    m = a.shape[0]
    labels = tuple(labels) if labels is not None else tuple(str(i + 1) for i in range(m))
    d = b - a
    edges = tuple(
        DiffEdge(labels[r], labels[c], float(d[r, c]))
        for r in range(m)
        for c in range(m)
        if d[r, c] != 0 and abs(d[r, c]) >= minimum
    )
    return DiffGraph(labels, edges, float(minimum), tuple(colors) if colors else None)


def _group_index(s: SequenceSet, groups: Sequence) -> dict[str, np.ndarray]:
    groups = [str(g) for g in groups]
    if len(groups) != s.n_sequences:
        raise DataError(f"{len(groups)} group labels for {s.n_sequences} sequences")
    order = list(dict.fromkeys(groups))
    return {g: np.array([i for i, x in enumerate(groups) if x == g]) for g in order}


def group_models(s: SequenceSet, groups: Sequence) -> dict[str, MarkovModel]:
    """One MM per group label, in order of first appearance."""
    return {g: estimate_mm(s.subset(idx)) for g, idx in _group_index(s, groups).items()}


def group_transition_counts(s: SequenceSet, groups: Sequence) -> dict[str, np.ndarray]:
    return {g: transition_counts(s.subset(idx)) for g, idx in _group_index(s, groups).items()}


def cluster_process_maps(m: MixtureModel, cut: float = 0.15, minimum: float = 0.05) -> list[ProcessGraph]:
    """One graph per cluster of a mixture Markov model, sharing the alphabet node order."""
    if m.kind != "mmm":
        raise ModelError("cluster process maps need a mixture of Markov models")
    return [model_process_graph(c, cut, minimum, title=lab) for c, lab in zip(m.clusters, m.cluster_labels)]
