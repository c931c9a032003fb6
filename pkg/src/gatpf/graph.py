"""The 2n-node voltage graph.

Node ``k`` (``0 <= k < n``) carries the real voltage part of bus ``k``, node
``n + k`` the imaginary part. Every in-service branch ``i-j`` contributes the
four edges ``mu_i-mu_j``, ``mu_i-omega_j``, ``omega_i-mu_j`` and
``omega_i-omega_j``; every bus also links its own two nodes. Self loops are
not stored: attention adds them when it normalizes.

Only the topology enters here. Branch parameters never do.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .case import PowerCase
from .errors import DimensionMismatch


@dataclass(frozen=True)
class VoltGraph:
    n_bus: int
    edges: np.ndarray = field(repr=False)  # (E, 2) undirected node pairs, u < v, sorted
    node_values: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.node_values is None:
            object.__setattr__(self, "node_values", np.zeros(2 * self.n_bus))

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_bus

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, ...]:
        nbrs = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(np.array(sorted(x), dtype=int) for x in nbrs)

    @cached_property
    def directed(self) -> tuple[np.ndarray, np.ndarray]:
        """``(dst, src)`` arrays over ``N_i`` plus a self loop per node, sorted by dst."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        nodes = np.arange(self.n_nodes)
        dst = np.concatenate([u, v, nodes])
        src = np.concatenate([v, u, nodes])
        order = np.lexsort((src, dst))
        return dst[order], src[order]

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        A[self.edges[:, 0], self.edges[:, 1]] = True
        A[self.edges[:, 1], self.edges[:, 0]] = True
        return A

    def same_structure(self, other: VoltGraph) -> bool:
        return self.n_bus == other.n_bus and np.array_equal(self.edges, other.edges)

    @property
    def mu(self) -> np.ndarray:
        return self.node_values[: self.n_bus].copy()

    @property
    def omega(self) -> np.ndarray:
        return self.node_values[self.n_bus:].copy()


def graph_from_edges(n_bus: int, edge_list) -> VoltGraph:
    """Build the voltage graph from 0-based bus pairs; parallel branches collapse."""
    pairs = set()
    for i, j in edge_list:
        i, j = int(i), int(j)
        if i == j:
            continue
        for a in (i, n_bus + i):
            for b in (j, n_bus + j):
                pairs.add((min(a, b), max(a, b)))
    for k in range(n_bus):
        pairs.add((k, n_bus + k))
    edges = np.array(sorted(pairs), dtype=int).reshape(-1, 2)
    return VoltGraph(n_bus=n_bus, edges=edges)


def build_voltage_graph(case: PowerCase) -> VoltGraph:
    return graph_from_edges(case.n_bus, case.edge_list())


def load_instance(graph: VoltGraph, mu, omega) -> VoltGraph:
    """Copy of ``graph`` with node values set from one voltage instance."""
    mu = np.asarray(mu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if mu.shape != (graph.n_bus,) or omega.shape != (graph.n_bus,):
        raise DimensionMismatch(
            f"graph has {graph.n_bus} buses, got mu{mu.shape} omega{omega.shape}"
        )
    return replace(graph, node_values=np.concatenate([mu, omega]))


@dataclass
class GraphBatch:
    """Disjoint union of voltage graphs, one per instance.

    ``mu_nodes[b]`` / ``omega_nodes[b]`` index the union node of bus ``b``
    (buses of all instances laid end to end).
    """

    n_nodes: int
    dst: np.ndarray
    src: np.ndarray
    x: np.ndarray            # (n_nodes,) node values
    mu_nodes: np.ndarray
    omega_nodes: np.ndarray
    mu: np.ndarray           # (total buses,)
    omega: np.ndarray
    sizes: list[int]         # buses per instance, in order

    @property
    def n_instances(self) -> int:
        return len(self.sizes)


def make_batch(parts) -> GraphBatch:
    """Union of ``(graph, mu, omega)`` parts; ``mu``/``omega`` may be ``(k, n)`` stacks."""
    dsts, srcs, xs, mun, omn, mus, oms, sizes = [], [], [], [], [], [], [], []
    offset = 0
    for graph, mu, omega in parts:
        mu = np.atleast_2d(np.asarray(mu, dtype=float))
        omega = np.atleast_2d(np.asarray(omega, dtype=float))
        n = graph.n_bus
        if mu.shape[1] != n or omega.shape != mu.shape:
            raise DimensionMismatch(f"graph has {n} buses, got mu{mu.shape} omega{omega.shape}")
        k = mu.shape[0]
        d, s = graph.directed
        offs = offset + 2 * n * np.arange(k)
        dsts.append((d[None, :] + offs[:, None]).ravel())
        srcs.append((s[None, :] + offs[:, None]).ravel())
        xs.append(np.concatenate([mu, omega], axis=1).ravel())
        bus = np.arange(n)
        mun.append((bus[None, :] + offs[:, None]).ravel())
        omn.append((n + bus[None, :] + offs[:, None]).ravel())
        mus.append(mu.ravel())
        oms.append(omega.ravel())
        sizes.extend([n] * k)
        offset += 2 * n * k
    cat = np.concatenate
    return GraphBatch(offset, cat(dsts), cat(srcs), cat(xs), cat(mun), cat(omn), cat(mus), cat(oms), sizes)
