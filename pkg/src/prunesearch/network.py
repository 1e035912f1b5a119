"""Network descriptions, the per-layer pruning search space, and proposal graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

SCHEMES = ("filter", "pattern", "block")
NONE = "none"
SKIP = "skip"

Rate = Union[Fraction, str]

RATES: tuple[Rate, ...] = (
    Fraction(1),
    Fraction(2),
    Fraction(5, 2),
    Fraction(3),
    Fraction(5),
    Fraction(7),
    Fraction(10),
    SKIP,
)


class ConfigurationError(ValueError):
    """A network or search-space description is malformed."""


class EncodingError(ValueError):
    """A proposal cannot be turned into a usable graph."""


def parse_rate(value) -> Rate:
    """Coerce ``value`` to a canonical rate (exact Fraction or ``"skip"``)."""
    if isinstance(value, str):
        if value == SKIP:
            return SKIP
        try:
            value = Fraction(value)
        except ValueError:
            raise ValueError(f"unknown pruning rate {value!r}") from None
    if isinstance(value, bool):
        raise ValueError(f"unknown pruning rate {value!r}")
    rate = Fraction(str(value)) if isinstance(value, float) else Fraction(value)
    if rate not in RATES:
        raise ValueError(f"unknown pruning rate {value!r}")
    return rate


def format_rate(rate: Rate) -> str:
    if rate == SKIP:
        return SKIP
    if rate.denominator == 1:
        return str(rate.numerator)
    return str(float(rate))


def rate_to_json(rate: Rate):
    if rate == SKIP:
        return SKIP
    if rate.denominator == 1:
        return rate.numerator
    return float(rate)


def _is_unpruned(rate: Rate) -> bool:
    return rate == SKIP or rate == 1


@dataclass(frozen=True)
class LayerSpec:
    id: str
    layer_type: str
    macs: int
    params: int
    skippable: bool = False
    allowed_schemes: tuple[str, ...] = SCHEMES
    allowed_rates: tuple[Rate, ...] = None

    def __post_init__(self):
        object.__setattr__(self, "allowed_schemes", tuple(self.allowed_schemes))
        if self.allowed_rates is None:
            object.__setattr__(self, "allowed_rates", RATES if self.skippable else RATES[:-1])
        object.__setattr__(
            self, "allowed_rates", tuple(parse_rate(r) for r in self.allowed_rates)
        )
        if self.macs < 0 or self.params < 0:
            raise ConfigurationError(f"layer {self.id}: macs and params must be >= 0")
        if not self.allowed_schemes or not set(self.allowed_schemes) <= set(SCHEMES):
            raise ConfigurationError(
                f"layer {self.id}: allowed_schemes must be a non-empty subset of {SCHEMES}"
            )
        if not self.allowed_rates:
            raise ConfigurationError(f"layer {self.id}: allowed_rates is empty")
        if SKIP in self.allowed_rates and not self.skippable:
            raise ConfigurationError(
                f"layer {self.id}: 'skip' allowed but layer is not skippable"
            )

    def options(self) -> list["LayerAssignment"]:
        """All valid assignments for this layer, in canonical order."""
        opts = []
        for rate in self.allowed_rates:
            if _is_unpruned(rate):
                opts.append(LayerAssignment(NONE, rate))
            else:
                opts.extend(LayerAssignment(s, rate) for s in self.allowed_schemes)
        return opts

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "layer_type": self.layer_type,
            "macs": self.macs,
            "params": self.params,
            "skippable": self.skippable,
            "allowed_schemes": list(self.allowed_schemes),
            "allowed_rates": [rate_to_json(r) for r in self.allowed_rates],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    edges: tuple[tuple[str, str], ...] = None

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if self.edges is None:
            edges = tuple((a.id, b.id) for a, b in zip(layers, layers[1:]))
        else:
            edges = tuple((str(u), str(v)) for u, v in self.edges)
        object.__setattr__(self, "edges", edges)
        self._check()

    def _check(self):
        ids = [layer.id for layer in self.layers]
        if not ids:
            raise ConfigurationError(f"network {self.name}: no layers")
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"network {self.name}: duplicate layer ids")
        known = set(ids)
        for u, v in self.edges:
            if u not in known or v not in known:
                raise ConfigurationError(f"network {self.name}: edge ({u}, {v}) names unknown layer")
        # Kahn's algorithm for acyclicity
        indeg = {i: 0 for i in ids}
        succ = {i: [] for i in ids}
        for u, v in self.edges:
            indeg[v] += 1
            succ[u].append(v)
        frontier = [i for i in ids if indeg[i] == 0]
        seen = 0
        while frontier:
            node = frontier.pop()
            seen += 1
            for nxt in succ[node]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    frontier.append(nxt)
        if seen != len(ids):
            raise ConfigurationError(f"network {self.name}: layer graph has a cycle")
        if not _connected(ids, self.edges):
            raise ConfigurationError(f"network {self.name}: layer graph is not connected")

    @property
    def layer_ids(self) -> tuple[str, ...]:
        return tuple(layer.id for layer in self.layers)

    def layer(self, layer_id: str) -> LayerSpec:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def total_params(self) -> int:
        return sum(layer.params for layer in self.layers)

    def total_macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "layers": [layer.to_dict() for layer in self.layers],
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        edges = d.get("edges")
        return cls(
            name=d["name"],
            layers=tuple(LayerSpec.from_dict(layer) for layer in d["layers"]),
            edges=None if edges is None else tuple(tuple(e) for e in edges),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))


def _connected(nodes: Sequence, edges: Iterable[tuple]) -> bool:
    nodes = list(nodes)
    if not nodes:
        return True
    adj = {n: set() for n in nodes}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    stack, seen = [nodes[0]], {nodes[0]}
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(nodes)


@dataclass(frozen=True)
class LayerAssignment:
    scheme: str
    rate: Rate

    def __post_init__(self):
        object.__setattr__(self, "rate", parse_rate(self.rate))
        if self.scheme not in SCHEMES + (NONE,):
            raise ValueError(f"unknown pruning scheme {self.scheme!r}")

    @property
    def skipped(self) -> bool:
        return self.rate == SKIP

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "rate": rate_to_json(self.rate)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerAssignment":
        return cls(d["scheme"], d["rate"])


@dataclass(frozen=True)
class PruningProposal:
    """A (scheme, rate) choice for every layer of ``network``.

    Equality and hashing use the assignments only, so proposals can be
    deduplicated with sets. ``assignments`` accepts any mapping and is stored
    as a tuple of ``(layer_id, LayerAssignment)`` pairs in network order.
    """

    network: NetworkSpec = field(compare=False, repr=False)
    assignments: tuple[tuple[str, LayerAssignment], ...]

    def __post_init__(self):
        raw = self.assignments
        if not isinstance(raw, Mapping):
            raw = dict(raw)
        unknown = set(raw) - set(self.network.layer_ids)
        if unknown:
            raise ValueError(f"assignments name unknown layers: {sorted(unknown)}")
        pairs = []
        for layer_id in self.network.layer_ids:
            if layer_id not in raw:
                raise ValueError(f"no assignment for layer {layer_id}")
            a = raw[layer_id]
            if not isinstance(a, LayerAssignment):
                a = LayerAssignment.from_dict(a)
            pairs.append((layer_id, a))
        object.__setattr__(self, "assignments", tuple(pairs))

    def __getitem__(self, layer_id: str) -> LayerAssignment:
        for lid, a in self.assignments:
            if lid == layer_id:
                return a
        raise KeyError(layer_id)

    def as_dict(self) -> dict[str, LayerAssignment]:
        return dict(self.assignments)

    def replace(self, changes: Mapping[str, LayerAssignment]) -> "PruningProposal":
        d = self.as_dict()
        d.update(changes)
        return PruningProposal(self.network, d)

    def to_dict(self) -> dict:
        return {lid: a.to_dict() for lid, a in self.assignments}

    @classmethod
    def from_dict(cls, network: NetworkSpec, d: Mapping) -> "PruningProposal":
        return cls(network, {lid: LayerAssignment.from_dict(a) for lid, a in d.items()})

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, network: NetworkSpec, text: str) -> "PruningProposal":
        return cls.from_dict(network, json.loads(text))

    @classmethod
    def dense(cls, network: NetworkSpec) -> "PruningProposal":
        return cls(network, {lid: LayerAssignment(NONE, 1) for lid in network.layer_ids})


@dataclass(frozen=True)
class Violation:
    layer_id: str
    reason: str


def validate(proposal: PruningProposal) -> list[Violation]:
    """Return every constraint violation of ``proposal``; empty means valid."""
    out = []
    for layer in proposal.network.layers:
        a = proposal[layer.id]
        if a.rate == SKIP and not layer.skippable:
            out.append(Violation(layer.id, "layer is not skippable"))
        elif a.rate not in layer.allowed_rates:
            out.append(Violation(layer.id, f"rate {format_rate(a.rate)} not allowed"))
        if _is_unpruned(a.rate):
            if a.scheme != NONE:
                out.append(Violation(layer.id, "scheme must be none for unpruned or skipped layer"))
        elif a.scheme == NONE:
            out.append(Violation(layer.id, "scheme required for pruned layer"))
        elif a.scheme not in layer.allowed_schemes:
            out.append(Violation(layer.id, f"scheme {a.scheme} not allowed"))
    return out


def random_proposal(network: NetworkSpec, rng: np.random.Generator) -> PruningProposal:
    """Draw each layer's assignment uniformly from its valid option set."""
    assignments = {}
    for layer in network.layers:
        opts = layer.options()
        if not opts:
            raise ConfigurationError(f"layer {layer.id} has no valid options")
        assignments[layer.id] = opts[int(rng.integers(len(opts)))]
    return PruningProposal(network, assignments)


@dataclass(frozen=True)
class ProposalGraph:
    """Labeled graph of the non-skipped layers of a proposal.

    ``labels[i]`` is ``"layer_type|scheme|rate"`` for node ``i``;
    ``layer_ids[i]`` names the layer the node came from.
    """

    labels: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    layer_ids: tuple[str, ...] = ()

    @property
    def nodes(self) -> tuple[tuple[int, str], ...]:
        return tuple(enumerate(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def neighbors(self) -> list[list[int]]:
        adj = [[] for _ in self.labels]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def dumps(self) -> str:
        return json.dumps(
            {"labels": list(self.labels), "edges": [list(e) for e in self.edges],
             "layer_ids": list(self.layer_ids)},
            sort_keys=True,
        )


def node_label(layer: LayerSpec, a: LayerAssignment) -> str:
    return f"{layer.layer_type}|{a.scheme}|{format_rate(a.rate)}"


def encode_graph(proposal: PruningProposal) -> ProposalGraph:
    """Encode ``proposal`` as a labeled graph, contracting skipped layers.

    A kept layer ``u`` gets an edge to kept layer ``v`` when the network has
    a path ``u -> ... -> v`` whose interior layers are all skipped.
    """
    network = proposal.network
    kept = [layer for layer in network.layers if not proposal[layer.id].skipped]
    if not kept:
        raise EncodingError("all layers skipped")
    index = {layer.id: i for i, layer in enumerate(kept)}
    succ = {lid: [] for lid in network.layer_ids}
    for u, v in network.edges:
        succ[u].append(v)

    edges = set()
    for layer in kept:
        stack = list(succ[layer.id])
        seen = set()
        while stack:
            nxt = stack.pop()
            if nxt in seen:
                continue
            seen.add(nxt)
            if nxt in index:
                edges.add((index[layer.id], index[nxt]))
            else:
                stack.extend(succ[nxt])
    edges = tuple(sorted(edges))
    if not _connected(range(len(kept)), edges):
        raise EncodingError("skipped layers disconnect the network")
    return ProposalGraph(
        labels=tuple(node_label(layer, proposal[layer.id]) for layer in kept),
        edges=edges,
        layer_ids=tuple(layer.id for layer in kept),
    )


def proposal_stats(proposal: PruningProposal) -> tuple[float, float]:
    """Remaining (params, MACs) under uniform 1/rate compression."""
    params = Fraction(0)
    macs = Fraction(0)
    for layer in proposal.network.layers:
        rate = proposal[layer.id].rate
        if rate == SKIP:
            continue
        params += Fraction(layer.params) / rate
        macs += Fraction(layer.macs) / rate
    return float(params), float(macs)
