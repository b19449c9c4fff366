"""Diffusion of suspended organisms on rooted binary river networks.

Each edge is an interval [0, l_e] with x = 0 at the downstream end; paths
drift downstream at speed v_e and diffuse at rate D_e.  At an internal node
the next edge is drawn proportionally to A_e D_e over the three incident
edges; the root absorbs, leaves reflect.  A coupled per-edge finite-volume
solver provides the deterministic cross-check for the Monte Carlo paths.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rng as rngmod
from .paths import ConfigError, PathSample, SimConfig


class NetworkError(ValueError):
    """Malformed network description."""


@dataclass(frozen=True)
class Edge:
    edge_id: str
    parent: str | None
    length: float
    velocity: float
    area: float
    diffusivity: float

    def __post_init__(self) -> None:
        if not self.length > 0:
            raise NetworkError(f"edge {self.edge_id}: length must be positive")
        if self.velocity < 0:
            raise NetworkError(f"edge {self.edge_id}: velocity must be >= 0")
        if not self.area > 0:
            raise NetworkError(f"edge {self.edge_id}: area must be positive")
        if not self.diffusivity > 0:
            raise NetworkError(f"edge {self.edge_id}: diffusivity must be positive")


@dataclass(frozen=True)
class NetworkPosition:
    edge_id: str
    x: float


@dataclass(frozen=True)
class RiverNetwork:
    """Rooted binary tree of stream reaches.

    The root edge has ``parent=None``; its x = 0 end is the absorbing root
    node.  Every other edge attaches its x = 0 end to the upstream end
    (x = l) of its parent.  Internal nodes join exactly three edges.
    """

    edges: tuple

    def __post_init__(self) -> None:
        ids = [e.edge_id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate edge ids")
        by_id = {e.edge_id: e for e in self.edges}
        roots = [e for e in self.edges if e.parent is None]
        if len(roots) != 1:
            raise NetworkError(f"need exactly one root edge, got {len(roots)}")
        children: dict[str, list[str]] = {e.edge_id: [] for e in self.edges}
        for e in self.edges:
            if e.parent is not None:
                if e.parent not in by_id:
                    raise NetworkError(f"edge {e.edge_id}: unknown parent {e.parent}")
                children[e.parent].append(e.edge_id)
        for eid, kids in children.items():
            if len(kids) not in (0, 2):
                raise NetworkError(
                    f"edge {eid} has {len(kids)} upstream edges; internal nodes join exactly three edges"
                )
        # reachability from the root (tree, no cycles by parent uniqueness)
        seen = set()
        stack = [roots[0].edge_id]
        while stack:
            eid = stack.pop()
            seen.add(eid)
            stack.extend(children[eid])
        if seen != set(ids):
            raise NetworkError("network is not connected to the root")
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})
        object.__setattr__(self, "_root", roots[0].edge_id)

    @property
    def root_edge(self) -> str:
        return self._root

    def edge(self, edge_id: str) -> Edge:
        return self._by_id[edge_id]

    def children(self, edge_id: str) -> tuple:
        return self._children[edge_id]

    def discharge_imbalance(self) -> dict[str, float]:
        """Relative discharge mismatch per internal node (warn-only check)."""
        out = {}
        for eid, kids in self._children.items():
            if not kids:
                continue
            e0 = self.edge(eid)
            inflow = sum(self.edge(k).area * self.edge(k).velocity for k in kids)
            outflow = e0.area * e0.velocity
            denom = max(abs(outflow), abs(inflow), 1e-300)
            out[eid] = abs(outflow - inflow) / denom
        return out


def parse_network(text: str) -> RiverNetwork:
    """Parse the one-edge-per-line format.

    ``edge_id parent_id length velocity area diffusivity`` with
    ``parent_id = ROOT`` for the root edge; ``#`` starts a comment.
    """
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise NetworkError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        eid, parent, length, vel, area, diff = parts
        edges.append(
            Edge(
                edge_id=eid,
                parent=None if parent == "ROOT" else parent,
                length=float(length),
                velocity=float(vel),
                area=float(area),
                diffusivity=float(diff),
            )
        )
    if not edges:
        raise NetworkError("no edges found")
    return RiverNetwork(tuple(edges))


def format_network(network: RiverNetwork) -> str:
    lines = ["# edge_id parent_id length velocity area diffusivity"]
    for e in network.edges:
        parent = e.parent if e.parent is not None else "ROOT"
        lines.append(f"{e.edge_id} {parent} {e.length!r} {e.velocity!r} {e.area!r} {e.diffusivity!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Monte Carlo paths


class _Tables:
    """Integer-indexed edge and node tables for vectorized stepping."""

    def __init__(self, network: RiverNetwork):
        self.ids = [e.edge_id for e in network.edges]
        self.index = {eid: i for i, eid in enumerate(self.ids)}
        n = len(self.ids)
        self.length = np.array([e.length for e in network.edges])
        self.velocity = np.array([e.velocity for e in network.edges])
        self.area = np.array([e.area for e in network.edges])
        self.diff = np.array([e.diffusivity for e in network.edges])
        self.parent = np.array(
            [self.index[e.parent] if e.parent is not None else -1 for e in network.edges],
            dtype=np.int64,
        )
        self.root = self.index[network.root_edge]
        self.has_children = np.zeros(n, dtype=bool)
        # node tables indexed by the downstream edge e0 of the node
        self.node_edges = -np.ones((n, 3), dtype=np.int64)
        self.node_cum = np.zeros((n, 3))
        for eid in self.ids:
            kids = network.children(eid)
            if not kids:
                continue
            i0 = self.index[eid]
            i1, i2 = (self.index[k] for k in kids)
            self.has_children[i0] = True
            w = np.array(
                [
                    self.area[i0] * self.diff[i0],
                    self.area[i1] * self.diff[i1],
                    self.area[i2] * self.diff[i2],
                ]
            )
            self.node_edges[i0] = (i0, i1, i2)
            self.node_cum[i0] = np.cumsum(w) / w.sum()


def _check_step_size(tables: _Tables, dt: float) -> float:
    delta = 3.0 * math.sqrt(tables.diff.max() * dt)
    if 2.5 * delta >= tables.length.min():
        raise ConfigError(
            f"dt too large for the shortest edge: node regions of width {delta:.4g} "
            f"overlap on length {tables.length.min():.4g}"
        )
    return delta


class _NetworkState:
    def __init__(self, n: int, edge0: int, x0: float):
        self.edge = np.full(n, edge0, dtype=np.int64)
        self.x = np.full(n, x0)
        self.alive = np.ones(n, bool)
        self.t_absorbed = np.full(n, np.inf)


def _network_step(state: _NetworkState, tables: _Tables, dt: float, delta: float, k: int, rng, node_counter=None):
    """Advance live paths by one step of size dt."""
    live = state.alive
    if not live.any():
        return
    e = state.edge
    x = state.x
    z = rng.standard_normal(x.shape)
    u = rng.random(x.shape)

    at_node_up = live & tables.has_children[e] & (x >= tables.length[e] - delta)
    at_node_dn = live & (e != tables.root) & (x <= delta)
    node_of = np.where(at_node_up, e, np.where(at_node_dn, tables.parent[e], -1))
    is_node = at_node_up | at_node_dn

    # ordinary in-edge Euler step
    ordinary = live & ~is_node
    if ordinary.any():
        xe = x[ordinary] - tables.velocity[e[ordinary]] * dt
        xe = xe + np.sqrt(tables.diff[e[ordinary]] * dt) * z[ordinary]
        x[ordinary] = xe

    # three-way node split with an exact half-line magnitude
    if is_node.any():
        nid = node_of[is_node]
        cum = tables.node_cum[nid]
        uu = u[is_node][:, None]
        slot = (uu >= cum).sum(axis=1)
        chosen = tables.node_edges[nid, slot]
        mag = np.abs(z[is_node]) * np.sqrt(tables.diff[chosen] * dt)
        mag = np.minimum(mag, 0.75 * tables.length[chosen])
        new_x = np.where(chosen == nid, tables.length[chosen] - mag, mag)
        state.edge[is_node] = chosen
        x[is_node] = new_x
        if node_counter is not None:
            np.add.at(node_counter, (nid, slot), 1)

    # boundary handling for ordinary steps
    e = state.edge
    over_up = live & ~is_node & (x > tables.length[e])
    if over_up.any():
        leaf = over_up & ~tables.has_children[e]
        if leaf.any():
            # fold at the reflecting leaf
            x[leaf] = 2.0 * tables.length[e[leaf]] - x[leaf]
            x[leaf] = np.clip(x[leaf], 0.0, tables.length[e[leaf]])
        internal = over_up & tables.has_children[e]
        if internal.any():
            # rare >3-sigma jump past an internal node: treat as a node event
            nid = e[internal]
            cum = tables.node_cum[nid]
            uu = rng.random(int(internal.sum()))[:, None]
            slot = (uu >= cum).sum(axis=1)
            chosen = tables.node_edges[nid, slot]
            over = (x[internal] - tables.length[nid]) * np.sqrt(
                tables.diff[chosen] / tables.diff[nid]
            )
            over = np.minimum(over, 0.75 * tables.length[chosen])
            x[internal] = np.where(chosen == nid, tables.length[chosen] - over, over)
            state.edge[internal] = chosen
            if node_counter is not None:
                np.add.at(node_counter, (nid, slot), 1)

    e = state.edge
    under = live & ~is_node & (x < 0.0)
    if under.any():
        root_under = under & (e == tables.root)
        if root_under.any():
            state.alive[root_under] = False
            state.t_absorbed[root_under] = k * dt
            x[root_under] = 0.0
        other = under & (e != tables.root)
        if other.any():
            # rare jump past the downstream node: node event with rescaled magnitude
            nid = tables.parent[e[other]]
            cum = tables.node_cum[nid]
            uu = rng.random(int(other.sum()))[:, None]
            slot = (uu >= cum).sum(axis=1)
            chosen = tables.node_edges[nid, slot]
            over = -x[other] * np.sqrt(tables.diff[chosen] / tables.diff[e[other]])
            over = np.minimum(over, 0.75 * tables.length[chosen])
            x[other] = np.where(chosen == nid, tables.length[chosen] - over, over)
            state.edge[other] = chosen
            if node_counter is not None:
                np.add.at(node_counter, (nid, slot), 1)

def simulate_network_path(
    network: RiverNetwork, start: NetworkPosition, config: SimConfig
) -> PathSample:
    """One trajectory with edge labels (uses path index 0 of the run)."""
    times, xs, es, t_abs = _simulate_recorded(network, start, config, n_paths=1)
    n_keep = times.size if not np.isfinite(t_abs[0]) else int(round(t_abs[0] / config.dt)) + 1
    return PathSample(times[:n_keep], xs[0, :n_keep], edges=es[0, :n_keep])


def _simulate_recorded(network, start, config, n_paths):
    tables = _Tables(network)
    delta = _check_step_size(tables, config.dt)
    if start.edge_id not in tables.index:
        raise NetworkError(f"unknown start edge {start.edge_id!r}")
    e0 = tables.index[start.edge_id]
    if not (0 <= start.x <= tables.length[e0]):
        raise NetworkError("start position outside its edge")
    n_steps = config.n_steps
    times = config.dt * np.arange(n_steps + 1)
    xs = np.empty((n_paths, n_steps + 1))
    es = np.empty((n_paths, n_steps + 1), dtype=np.int64)
    state = _NetworkState(n_paths, e0, start.x)
    gen = rngmod.stream(config.seed, 0)
    xs[:, 0] = state.x
    es[:, 0] = state.edge
    prev_root_x = state.x.copy()
    for k in range(1, n_steps + 1):
        on_root_before = state.alive & (state.edge == tables.root)
        prev_root_x[:] = state.x
        _network_step(state, tables, config.dt, delta, k, gen)
        _root_bridge_absorb(state, tables, config.dt, k, gen, on_root_before, prev_root_x)
        xs[:, k] = np.where(state.alive, state.x, 0.0)
        es[:, k] = state.edge
    return times, xs, es, state.t_absorbed


def _root_bridge_absorb(state, tables, dt, k, rng, on_root_before, prev_x):
    """Within-step absorption at the root via the Brownian-bridge minimum."""
    cand = state.alive & on_root_before & (state.edge == tables.root) & (state.x > 0) & (prev_x > 0)
    if not cand.any():
        return
    d = tables.diff[tables.root]
    arg = -2.0 * prev_x[cand] * state.x[cand] / (d * dt)
    p = np.where(arg < -745.0, 0.0, np.exp(np.minimum(arg, 0.0)))
    hit = rng.random(p.shape) < p
    idx = np.flatnonzero(cand)[hit]
    state.alive[idx] = False
    state.t_absorbed[idx] = k * dt - 0.5 * dt
    state.x[idx] = 0.0


@dataclass(frozen=True)
class JunctionStats:
    """Empirical next-edge frequencies per internal node."""

    node_edge: dict  # e0 edge id -> (edge ids, counts, expected probabilities)


def junction_frequencies(
    network: RiverNetwork, start: NetworkPosition, config: SimConfig
) -> JunctionStats:
    """Count node-split draws per incident edge over a path ensemble."""
    tables = _Tables(network)
    delta = _check_step_size(tables, config.dt)
    e0 = tables.index[start.edge_id]
    n_steps = config.n_steps

    def run(j: int, n: int, gen: np.random.Generator):
        counter = np.zeros((len(tables.ids), 3), dtype=np.int64)
        state = _NetworkState(n, e0, start.x)
        prev_x = state.x.copy()
        for k in range(1, n_steps + 1):
            on_root = state.alive & (state.edge == tables.root)
            prev_x[:] = state.x
            _network_step(state, tables, config.dt, delta, k, gen, node_counter=counter)
            _root_bridge_absorb(state, tables, config.dt, k, gen, on_root, prev_x)
        return counter

    counters = rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads)
    total = np.sum(counters, axis=0)
    out = {}
    for eid in tables.ids:
        i = tables.index[eid]
        if not tables.has_children[i]:
            continue
        idx3 = tables.node_edges[i]
        w = tables.area[idx3] * tables.diff[idx3]
        out[eid] = (
            tuple(tables.ids[j] for j in idx3),
            tuple(int(c) for c in total[i]),
            tuple(float(v) for v in w / w.sum()),
        )
    return JunctionStats(node_edge=out)


@dataclass(frozen=True)
class KernelEstimate:
    """Histogrammed dispersal kernel over the network."""

    bin_width: float
    edges: dict  # edge_id -> (bin_centers, mass)
    absorbed_fraction: float
    n_paths: int

    def total_mass(self) -> float:
        return float(sum(m.sum() for _, m in self.edges.values()) + self.absorbed_fraction)


def dispersal_kernel_mc(
    network: RiverNetwork,
    y: NetworkPosition,
    sigma: float,
    config: SimConfig,
    bin_width: float = 0.1,
) -> KernelEstimate:
    """Empirical law of the position at an independent Exp(sigma) settling time.

    Paths absorbed at the root before settling are reported separately as the
    absorbed fraction; settling positions are recorded on the step grid.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    tables = _Tables(network)
    delta = _check_step_size(tables, config.dt)
    e0 = tables.index[y.edge_id]
    n_steps = config.n_steps
    n_bins = [max(1, int(round(l / bin_width))) for l in tables.length]

    def run(j: int, n: int, gen: np.random.Generator):
        tau = gen.exponential(1.0 / sigma, size=n)
        state = _NetworkState(n, e0, y.x)
        settled_edge = -np.ones(n, dtype=np.int64)
        settled_x = np.zeros(n)
        prev_x = state.x.copy()
        for k in range(1, n_steps + 1):
            settle_now = state.alive & (settled_edge < 0) & (tau <= k * config.dt)
            if settle_now.any():
                settled_edge[settle_now] = state.edge[settle_now]
                settled_x[settle_now] = state.x[settle_now]
                state.alive[settle_now] = False
            if not state.alive.any():
                break
            on_root = state.alive & (state.edge == tables.root)
            prev_x[:] = state.x
            _network_step(state, tables, config.dt, delta, k, gen)
            _root_bridge_absorb(state, tables, config.dt, k, gen, on_root, prev_x)
        unsettled = (settled_edge < 0) & ~np.isfinite(state.t_absorbed)
        if unsettled.any():
            raise SimulationHorizonError(
                f"{unsettled.mean():.3%} of paths neither settled nor were absorbed; "
                "increase the horizon"
            )
        hists = [np.zeros(nb) for nb in n_bins]
        for i, nb in enumerate(n_bins):
            mask = settled_edge == i
            if mask.any():
                h, _ = np.histogram(settled_x[mask], bins=nb, range=(0.0, tables.length[i]))
                hists[i] += h
        absorbed = int(np.isfinite(state.t_absorbed).sum())
        return hists, absorbed

    parts = rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads)
    hists = [np.zeros(nb) for nb in n_bins]
    absorbed = 0
    for hs, ab in parts:
        absorbed += ab
        for i in range(len(hists)):
            hists[i] += hs[i]
    n = config.n_paths
    edges_out = {}
    for i, eid in enumerate(tables.ids):
        centers = (np.arange(n_bins[i]) + 0.5) * (tables.length[i] / n_bins[i])
        edges_out[eid] = (centers, hists[i] / n)
    return KernelEstimate(
        bin_width=bin_width,
        edges=edges_out,
        absorbed_fraction=absorbed / n,
        n_paths=n,
    )


class SimulationHorizonError(RuntimeError):
    pass


def exponential_kernel_oracle(d: float, sigma: float, y: float, x) -> np.ndarray:
    """Free-line dispersal kernel: sqrt(sigma/(2D)) exp(-|x-y| sqrt(2 sigma/D))."""
    x = np.asarray(x, float)
    return np.sqrt(sigma / (2.0 * d)) * np.exp(-np.abs(x - y) * np.sqrt(2.0 * sigma / d))


# ---------------------------------------------------------------------------
# coupled per-edge PDE


@dataclass(frozen=True)
class NetworkSolution:
    """Per-edge forward density snapshots and mass accounting."""

    edge_x: dict  # edge_id -> node positions
    edge_u: dict  # edge_id -> density u at nodes (final time)
    mass: np.ndarray  # mass per recorded step
    absorbed: np.ndarray  # cumulative absorbed mass per recorded step
    t: np.ndarray

    def bin_masses(self, edge_id: str, n_bins: int) -> np.ndarray:
        """Integrate the final density over equal bins of the edge."""
        x = self.edge_x[edge_id]
        u = self.edge_u[edge_id]
        l = x[-1]
        grid = np.linspace(0.0, l, 2049)
        uu = np.interp(grid, x, u)
        masses = np.empty(n_bins)
        bounds = np.linspace(0.0, l, n_bins + 1)
        for i in range(n_bins):
            m = (grid >= bounds[i]) & (grid <= bounds[i + 1])
            masses[i] = np.trapezoid(uu[m], grid[m])
        return masses


def network_pde_crosscheck(
    network: RiverNetwork,
    start: NetworkPosition,
    t_end: float,
    h: float = 0.02,
    dt: float = 1e-3,
) -> NetworkSolution:
    """Forward density of the network diffusion from a point source.

    Builds the graph finite-volume system in scale/speed form: per-edge scale
    densities sigma_e exp(2 v_e x/D_e) with the sigma_e recursion chosen so
    the A D-weighted derivative matching at junctions becomes an unweighted
    flux sum for the evolved variable q; the forward density is q times the
    speed density, mirroring the reversibility of the process.
    """
    if len(network.edges) > 63:
        raise NetworkError("cross-check solver is intended for small networks")
    tables = _Tables(network)
    # sigma recursion from the root
    sigma = np.zeros(len(tables.ids))
    order = _topo_order(tables)
    r = tables.root
    sigma[r] = 1.0 / (tables.area[r] * tables.diff[r])
    for i in order:
        if not tables.has_children[i]:
            continue
        c_n = (
            tables.area[i]
            * tables.diff[i]
            * sigma[i]
            * math.exp(2.0 * tables.velocity[i] * tables.length[i] / tables.diff[i])
        )
        for j in tables.node_edges[i][1:]:
            sigma[j] = c_n / (tables.area[j] * tables.diff[j])

    # grids and global indexing: shared unknowns at junction and leaf nodes
    n_edges = len(tables.ids)
    n_cells = [max(2, int(round(tables.length[i] / h))) for i in range(n_edges)]
    xg = [np.linspace(0.0, tables.length[i], n_cells[i] + 1) for i in range(n_edges)]

    index = {}
    counter = 0

    def new_unknown():
        nonlocal counter
        counter += 1
        return counter - 1

    # upstream-node unknown per edge (junction or leaf)
    up_node = {}
    for i in range(n_edges):
        up_node[i] = new_unknown()
    # interior nodes
    interior = {}
    for i in range(n_edges):
        interior[i] = [new_unknown() for _ in range(n_cells[i] - 1)]
    root_node = new_unknown()  # Dirichlet q = 0

    def node_index(i: int, j: int) -> int:
        # j-th grid node of edge i
        if j == 0:
            return root_node if i == tables.root else up_node[tables.parent[i]]
        if j == n_cells[i]:
            return up_node[i]
        return interior[i][j - 1]

    n_unknown = counter
    w = np.zeros(n_unknown)
    rows, cols, vals = [], [], []

    def sprime_int(i: int, x0: float, x1: float) -> float:
        v, d, s = tables.velocity[i], tables.diff[i], sigma[i]
        if v == 0.0:
            return s * (x1 - x0)
        a = 2.0 * v / d
        return s / a * (math.exp(a * x1) - math.exp(a * x0))

    def mprime_int(i: int, x0: float, x1: float) -> float:
        v, d, s = tables.velocity[i], tables.diff[i], sigma[i]
        if v == 0.0:
            return 2.0 / (d * s) * (x1 - x0)
        a = 2.0 * v / d
        return 2.0 / (d * s * a) * (math.exp(-a * x0) - math.exp(-a * x1))

    for i in range(n_edges):
        xs = xg[i]
        for j in range(n_cells[i]):
            g = 1.0 / sprime_int(i, xs[j], xs[j + 1])
            a_idx, b_idx = node_index(i, j), node_index(i, j + 1)
            for p, q_ in ((a_idx, b_idx), (b_idx, a_idx)):
                rows.append(p)
                cols.append(q_)
                vals.append(g)
                rows.append(p)
                cols.append(p)
                vals.append(-g)
        # speed-measure cell masses
        for j in range(n_cells[i] + 1):
            mid_lo = 0.5 * (xs[j - 1] + xs[j]) if j > 0 else xs[0]
            mid_hi = 0.5 * (xs[j] + xs[j + 1]) if j < n_cells[i] else xs[-1]
            w[node_index(i, j)] += mprime_int(i, mid_lo, mid_hi)

    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_unknown, n_unknown))
    Adiv = sp.diags(1.0 / w) @ A

    q = np.zeros(n_unknown)
    i_start = tables.index[start.edge_id]
    j_start = int(round(start.x / (tables.length[i_start] / n_cells[i_start])))
    j_start = min(max(j_start, 1), n_cells[i_start])  # keep off the root node
    k_start = node_index(i_start, j_start)
    q[k_start] = 1.0 / w[k_start]

    n_steps = int(round(t_end / dt))
    M = sp.identity(n_unknown, format="lil") - dt * Adiv
    M[root_node, :] = 0.0
    M[root_node, root_node] = 1.0
    lu = spla.splu(M.tocsc())
    # flux conductance into the root (for absorbed-mass accounting)
    g_root = 1.0 / sprime_int(tables.root, xg[tables.root][0], xg[tables.root][1])
    first_interior = node_index(tables.root, 1)

    masses = [float(np.dot(w, q))]
    absorbed = [0.0]
    tgrid = [0.0]
    for k in range(1, n_steps + 1):
        q[root_node] = 0.0
        q = lu.solve(q)
        q[root_node] = 0.0
        absorbed.append(absorbed[-1] + dt * g_root * q[first_interior])
        masses.append(float(np.dot(w, q)))
        tgrid.append(k * dt)

    edge_x = {}
    edge_u = {}
    for i, eid in enumerate(tables.ids):
        xs = xg[i]
        vals_u = np.empty(xs.size)
        for j in range(xs.size):
            v, d, s = tables.velocity[i], tables.diff[i], sigma[i]
            mprime = 2.0 / (d * s) * math.exp(-2.0 * v * xs[j] / d)
            vals_u[j] = q[node_index(i, j)] * mprime
        edge_x[eid] = xs
        edge_u[eid] = vals_u
    return NetworkSolution(
        edge_x=edge_x,
        edge_u=edge_u,
        mass=np.asarray(masses),
        absorbed=np.asarray(absorbed),
        t=np.asarray(tgrid),
    )


def _topo_order(tables: _Tables) -> list[int]:
    """Edges ordered root-first (parents before children)."""
    order = []
    stack = [tables.root]
    while stack:
        i = stack.pop()
        order.append(i)
        kids = tables.node_edges[i][1:]
        if tables.has_children[i]:
            stack.extend(int(j) for j in kids)
    return order


def network_marginal_histogram(
    network: RiverNetwork,
    start: NetworkPosition,
    t_end: float,
    config: SimConfig,
    n_bins_per_edge: int,
):
    """MC histogram of live-path positions at t_end plus the absorbed fraction."""
    tables = _Tables(network)
    delta = _check_step_size(tables, config.dt)
    e0 = tables.index[start.edge_id]
    n_steps = int(round(t_end / config.dt))

    def run(j: int, n: int, gen: np.random.Generator):
        state = _NetworkState(n, e0, start.x)
        prev_x = state.x.copy()
        for k in range(1, n_steps + 1):
            on_root = state.alive & (state.edge == tables.root)
            prev_x[:] = state.x
            _network_step(state, tables, config.dt, delta, k, gen)
            _root_bridge_absorb(state, tables, config.dt, k, gen, on_root, prev_x)
        hists = []
        for i in range(len(tables.ids)):
            mask = state.alive & (state.edge == i)
            h, _ = np.histogram(
                state.x[mask], bins=n_bins_per_edge, range=(0.0, tables.length[i])
            )
            hists.append(h)
        return hists, int((~state.alive).sum())

    parts = rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads)
    hists = [np.zeros(n_bins_per_edge) for _ in tables.ids]
    absorbed = 0
    for hs, ab in parts:
        absorbed += ab
        for i in range(len(hists)):
            hists[i] += hs[i]
    counts = {eid: hists[i] for i, eid in enumerate(tables.ids)}
    return counts, absorbed / config.n_paths
