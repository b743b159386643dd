"""Transmission network model and DC shift-factor (PTDF) matrices.

Flows follow the lossless DC approximation: a line carries
``(theta_from - theta_to) / reactance`` and every nodal imbalance is
absorbed at the slack bus. A shift factor is the flow on a line caused by
injecting 1 MW at a bus and withdrawing it at the slack.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DisconnectedNetwork,
    NetworkError,
    SingularSusceptance,
    SlackError,
)

NETWORK_DIR = Path(__file__).parent / "networks"


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool = False
    name: str = ""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float
    capacity: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus} is a self loop")
        if not self.reactance > 0:
            raise SingularSusceptance(
                f"line {self.from_bus}-{self.to_bus} has non-positive reactance {self.reactance}"
            )
        if not self.capacity > 0:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus} has non-positive capacity")


@dataclass(frozen=True)
class Generator:
    bus: int
    marginal_cost: float
    capacity: float

    def __post_init__(self):
        if self.capacity < 0:
            raise NetworkError(f"generator at bus {self.bus} has negative capacity")
        if not np.isfinite(self.marginal_cost):
            raise NetworkError(f"generator at bus {self.bus} has non-finite cost")


@dataclass(frozen=True)
class LoadSite:
    bus: int
    weight: float


@dataclass(frozen=True, eq=False)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[LoadSite, ...]
    Hg: np.ndarray = field(repr=False)
    Hd: np.ndarray = field(repr=False)
    ptdf: np.ndarray = field(repr=False)
    name: str = ""

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def slack(self) -> int:
        return next(b.id for b in self.buses if b.is_slack)

    @property
    def costs(self) -> np.ndarray:
        return np.array([g.marginal_cost for g in self.generators], dtype=float)

    @property
    def gen_capacity(self) -> np.ndarray:
        return np.array([g.capacity for g in self.generators], dtype=float)

    @property
    def line_capacity(self) -> np.ndarray:
        return np.array([ln.capacity for ln in self.lines], dtype=float)

    @property
    def load_weights(self) -> np.ndarray:
        return np.array([ld.weight for ld in self.loads], dtype=float)

    def nodal_demand(self, total: float) -> np.ndarray:
        """Split a total demand over the load sites by their weights."""
        return float(total) * self.load_weights

    def incidence(self) -> np.ndarray:
        A = np.zeros((len(self.lines), self.n_bus))
        for k, ln in enumerate(self.lines):
            A[k, ln.from_bus] = 1.0
            A[k, ln.to_bus] = -1.0
        return A

    def with_slack(self, slack: int) -> "Network":
        buses = [Bus(b.id, b.id == slack, b.name) for b in self.buses]
        return build_network(buses, self.lines, self.generators, self.loads, name=self.name)


def _check_connected(n_bus: int, lines: Sequence[Line]) -> None:
    adj: list[list[int]] = [[] for _ in range(n_bus)]
    for ln in lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    if len(seen) != n_bus:
        missing = sorted(set(range(n_bus)) - seen)
        raise DisconnectedNetwork(f"buses {missing} are not reachable from bus 0")


def ptdf_matrix(n_bus: int, lines: Sequence[Line], slack: int) -> np.ndarray:
    """Line x bus shift factors, with a zero column at the slack."""
    L = len(lines)
    A = np.zeros((L, n_bus))
    b = np.empty(L)
    for k, ln in enumerate(lines):
        A[k, ln.from_bus] = 1.0
        A[k, ln.to_bus] = -1.0
        b[k] = 1.0 / ln.reactance
    keep = np.array([i for i in range(n_bus) if i != slack], dtype=int)
    Bbus = A.T @ (b[:, None] * A)
    Bred = Bbus[np.ix_(keep, keep)]
    try:
        X = np.linalg.inv(Bred)
    except np.linalg.LinAlgError as exc:
        raise SingularSusceptance("reduced susceptance matrix is singular") from exc
    ptdf = np.zeros((L, n_bus))
    ptdf[:, keep] = (b[:, None] * A[:, keep]) @ X
    return ptdf


def build_network(buses, lines, generators, loads, name: str = "") -> Network:
    buses = tuple(buses)
    lines = tuple(lines)
    generators = tuple(generators)
    loads = tuple(loads)
    n_bus = len(buses)
    if n_bus == 0:
        raise NetworkError("network has no buses")
    if sorted(b.id for b in buses) != list(range(n_bus)):
        raise NetworkError("bus ids must be contiguous 0..n_bus-1")
    buses = tuple(sorted(buses, key=lambda b: b.id))
    slacks = [b.id for b in buses if b.is_slack]
    if not slacks:
        raise SlackError("network has no slack bus")
    if len(slacks) > 1:
        raise SlackError(f"network has multiple slack buses {slacks}")
    for ln in lines:
        if not (0 <= ln.from_bus < n_bus and 0 <= ln.to_bus < n_bus):
            raise NetworkError(f"line {ln.from_bus}-{ln.to_bus} references an unknown bus")
    for obj in (*generators, *loads):
        if not 0 <= obj.bus < n_bus:
            raise NetworkError(f"{type(obj).__name__} references unknown bus {obj.bus}")
    if loads:
        w = np.array([ld.weight for ld in loads])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise NetworkError("load weights must be non-negative and sum to 1")
    _check_connected(n_bus, lines)

    ptdf = ptdf_matrix(n_bus, lines, slacks[0])
    Hg = ptdf[:, [g.bus for g in generators]]
    Hd = ptdf[:, [ld.bus for ld in loads]]
    for arr in (ptdf, Hg, Hd):
        arr.setflags(write=False)
    return Network(buses, lines, generators, loads, Hg, Hd, ptdf, name)


def line_flow(net: Network, g, d) -> np.ndarray:
    """Flows Hg @ g - Hd @ d for generation ``g`` and per-load-site demand ``d``."""
    g = np.asarray(g, dtype=float)
    d = np.asarray(d, dtype=float)
    if g.shape != (net.n_gen,) or d.shape != (len(net.loads),):
        raise DimensionMismatch(
            f"expected g of length {net.n_gen} and d of length {len(net.loads)}, "
            f"got {g.shape} and {d.shape}"
        )
    return net.Hg @ g - net.Hd @ d


# -- JSON file format -------------------------------------------------------

def network_from_dict(doc: dict) -> Network:
    try:
        raw_buses = doc["buses"]
        slack = int(doc["slack_bus"])
        buses = []
        for i, b in enumerate(raw_buses):
            if isinstance(b, dict):
                bid = int(b.get("id", i))
                buses.append(Bus(bid, bid == slack, str(b.get("name", ""))))
            else:
                buses.append(Bus(int(b), int(b) == slack))
        lines = [
            Line(int(x["from"]), int(x["to"]), float(x["reactance_pu"]), float(x["capacity_mw"]))
            for x in doc["lines"]
        ]
        gens = [
            Generator(int(x["bus"]), float(x["marginal_cost"]), float(x["capacity_mw"]))
            for x in doc["generators"]
        ]
        loads = [LoadSite(int(x["bus"]), float(x["weight"])) for x in doc["loads"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, NetworkError):
            raise
        raise NetworkError(f"malformed network document: {exc!r}") from exc
    return build_network(buses, lines, gens, loads, name=str(doc.get("name", "")))


def network_to_dict(net: Network) -> dict:
    return {
        "name": net.name,
        "slack_bus": net.slack,
        "buses": [{"id": b.id, "name": b.name} for b in net.buses],
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "reactance_pu": ln.reactance, "capacity_mw": ln.capacity}
            for ln in net.lines
        ],
        "generators": [
            {"bus": g.bus, "marginal_cost": g.marginal_cost, "capacity_mw": g.capacity}
            for g in net.generators
        ],
        "loads": [{"bus": ld.bus, "weight": ld.weight} for ld in net.loads],
    }


def load_network(path) -> Network:
    """Read a network file. ``builtin:<name>`` resolves to a bundled case."""
    path = str(path)
    if path.startswith("builtin:"):
        path = str(NETWORK_DIR / f"{path.split(':', 1)[1]}.json")
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=2)
