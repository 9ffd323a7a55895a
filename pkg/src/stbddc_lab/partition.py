"""Cartesian space-time partitioning, interface objects, coarse constraints.

The spatial grid is split into P_x x P_y subdomains by cell aggregation and
the time axis into P_t slabs of K_n steps each.  Interface nodes are
classified into geometric objects (corners and edges in 2D) keyed by the set
of subdomains containing them; constraint rows are built per space-time
subdomain and tied together through deterministic global coarse-DOF keys.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fem import SpaceTimeMesh

log = logging.getLogger(__name__)

KIND_SPACE_OBJECT = "space_object"          # plain object constraint (space BDDC)
KIND_SPACE_AVG = "space_avg"                # time-averaged object constraint
KIND_TIME_MEAN = "time_interface_mean"      # subdomain mean across a time interface
KIND_TIME_OBJECT = "time_interface_object"  # object values pinned at a time interface


class SpaceTimePartition:
    """Cartesian P_x x P_y x P_t partition of a structured space-time grid."""

    def __init__(self, mesh: SpaceTimeMesh, px: int, py: int, pt: int):
        if mesh.nx % px or mesh.ny % py:
            raise ValueError(
                f"grid {mesh.nx}x{mesh.ny} not divisible by partition {px}x{py}")
        if mesh.steps % pt:
            raise ValueError(
                f"{mesh.steps} time steps not divisible by P_t={pt}")
        self.mesh = mesh
        self.px, self.py, self.pt = px, py, pt
        self.cx, self.cy = mesh.nx // px, mesh.ny // py
        self.kn = mesh.steps // pt
        self.n_space = px * py
        self.n_time = pt
        self.n_subdomains = self.n_space * pt

        self._build_node_ownership()
        self._space_nodes = [self._closure_nodes(s) for s in range(self.n_space)]
        self._space_cells = [self._cells_of(s) for s in range(self.n_space)]
        self._g2l = []
        for nodes in self._space_nodes:
            lookup = np.full(mesh.n_nodes, -1, dtype=np.int64)
            lookup[nodes] = np.arange(nodes.size)
            self._g2l.append(lookup)

    # -- spatial layout -------------------------------------------------

    def _build_node_ownership(self):
        mesh = self.mesh
        nx1 = mesh.nx + 1
        i = np.arange(mesh.n_nodes) % nx1
        j = np.arange(mesh.n_nodes) // nx1
        self._bx_lo = np.clip((i - 1) // self.cx, 0, self.px - 1)
        self._bx_hi = np.clip(i // self.cx, 0, self.px - 1)
        self._by_lo = np.clip((j - 1) // self.cy, 0, self.py - 1)
        self._by_hi = np.clip(j // self.cy, 0, self.py - 1)
        self.node_multiplicity = ((self._bx_hi - self._bx_lo + 1)
                                  * (self._by_hi - self._by_lo + 1))
        self.interface_nodes = np.nonzero(
            (self.node_multiplicity >= 2) & ~mesh.dirichlet_mask)[0]

    def node_neigh(self, node: int) -> tuple[int, ...]:
        """Spatial subdomains whose closure contains the node."""
        return tuple(
            by * self.px + bx
            for by in range(self._by_lo[node], self._by_hi[node] + 1)
            for bx in range(self._bx_lo[node], self._bx_hi[node] + 1))

    def _cells_of(self, s: int) -> np.ndarray:
        bx, by = s % self.px, s // self.px
        ci = np.arange(bx * self.cx, (bx + 1) * self.cx)
        cj = np.arange(by * self.cy, (by + 1) * self.cy)
        return (cj[:, None] * self.mesh.nx + ci[None, :]).ravel()

    def _closure_nodes(self, s: int) -> np.ndarray:
        bx, by = s % self.px, s // self.px
        nx1 = self.mesh.nx + 1
        ni = np.arange(bx * self.cx, (bx + 1) * self.cx + 1)
        nj = np.arange(by * self.cy, (by + 1) * self.cy + 1)
        nodes = (nj[:, None] * nx1 + ni[None, :]).ravel()
        return nodes[~self.mesh.dirichlet_mask[nodes]]

    def cells_of(self, s: int) -> np.ndarray:
        return self._space_cells[s]

    def nodes_of(self, s: int) -> np.ndarray:
        """Non-Dirichlet closure nodes of spatial subdomain ``s`` (sorted)."""
        return self._space_nodes[s]

    def local_index(self, s: int) -> np.ndarray:
        """Global-node to local-node lookup for subdomain ``s`` (-1 outside)."""
        return self._g2l[s]

    def lumped_weights(self, s: int) -> np.ndarray:
        """Lumped-mass quadrature of int_omega v, on local nodes of ``s``."""
        mesh = self.mesh
        w = np.zeros(mesh.n_nodes)
        corners = mesh.cells[self.cells_of(s)].ravel()
        np.add.at(w, corners, mesh.h * mesh.h / 4.0)
        return w[self.nodes_of(s)]

    # -- time layout ----------------------------------------------------

    def time_offset(self, n: int) -> int:
        """Global step index of t_n^0 for the 1-based time subdomain ``n``."""
        return (n - 1) * self.kn

    def subdomains(self):
        """All (n, s) pairs, time-major, deterministic order."""
        return [(n, s) for n in range(1, self.pt + 1)
                for s in range(self.n_space)]


@dataclass(frozen=True)
class GeometricObject:
    """A connected interface component shared by a fixed set of subdomains."""

    kind: str                 # "corner" | "edge"
    nodes: tuple[int, ...]    # mesh node ids, sorted
    neigh: tuple[int, ...]    # spatial subdomain ids, sorted

    @property
    def key(self) -> tuple:
        return (0 if self.kind == "corner" else 1, self.neigh, self.nodes[0])


class ObjectSet:
    """Interface objects plus a per-subdomain view."""

    def __init__(self, objects: list[GeometricObject], n_space: int):
        self.objects = sorted(objects, key=lambda o: o.key)
        self._by_subdomain = [[] for _ in range(n_space)]
        for obj in self.objects:
            for s in obj.neigh:
                self._by_subdomain[s].append(obj)

    def __len__(self):
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects)

    def of_subdomain(self, s: int) -> list[GeometricObject]:
        return self._by_subdomain[s]

    def select(self, variant: str) -> "ObjectSet":
        """Restrict to the BDDC variant: "c" (corners) or "ce" (corners+edges)."""
        if variant == "ce":
            return self
        if variant == "c":
            kept = [o for o in self.objects if o.kind == "corner"]
            return ObjectSet(kept, len(self._by_subdomain))
        raise ValueError(f"unknown object variant {variant!r}")


def classify_objects(partition: SpaceTimePartition) -> ObjectSet:
    """Group non-Dirichlet interface nodes into corners and edges.

    Nodes are keyed by the set of subdomains containing them; groups with the
    same key split into connected components along grid lines.  Corners are
    cross points contained in three or more subdomains.
    """
    mesh = partition.mesh
    groups: dict[tuple, list[int]] = {}
    for node in partition.interface_nodes:
        groups.setdefault(partition.node_neigh(node), []).append(int(node))

    nx1 = mesh.nx + 1
    objects = []
    for neigh, nodes in groups.items():
        kind = "corner" if len(neigh) >= 3 else "edge"
        remaining = set(nodes)
        while remaining:
            seed = remaining.pop()
            comp = [seed]
            stack = [seed]
            while stack:
                cur = stack.pop()
                for nb in (cur - 1, cur + 1, cur - nx1, cur + nx1):
                    if nb in remaining:
                        remaining.remove(nb)
                        comp.append(nb)
                        stack.append(nb)
            objects.append(GeometricObject(
                kind=kind, nodes=tuple(sorted(comp)), neigh=neigh))
    return ObjectSet(objects, partition.n_space)


@dataclass
class ConstraintRow:
    """One coarse-DOF restriction on a space-time subdomain.

    Entries live at (local time index, local spatial node) pairs; rows sharing
    the same ``key`` across subdomains define a single global coarse DOF whose
    value is forced to be identical.
    """

    kind: str
    key: tuple
    time_indices: np.ndarray
    node_indices: np.ndarray
    values: np.ndarray


def _object_entries(obj: GeometricObject, g2l: np.ndarray, h: float):
    """Spatial nodal weights of int_lambda tau(v): vertex value or h per node."""
    locs = g2l[np.asarray(obj.nodes)]
    if np.any(locs < 0):
        raise AssertionError("object node missing from subdomain closure")
    weight = 1.0 if obj.kind == "corner" else h
    return locs, np.full(locs.size, weight)


def build_space_constraints(partition: SpaceTimePartition, objects: ObjectSet,
                            variant: str = "ce"):
    """Plain spatial object constraints (one row per subdomain and object).

    Used by the sequential-in-time baseline, where each time step is a purely
    spatial solve; rows sit at the subdomain's single time level.
    """
    objects = objects.select(variant)
    rows: dict[int, list[ConstraintRow]] = {s: [] for s in range(partition.n_space)}
    for s in range(partition.n_space):
        g2l = partition.local_index(s)
        for obj in objects.of_subdomain(s):
            locs, vals = _object_entries(obj, g2l, partition.mesh.h)
            rows[s].append(ConstraintRow(
                kind=KIND_SPACE_OBJECT, key=("S", obj.key),
                time_indices=np.full(locs.size, 1),
                node_indices=locs, values=vals))
    return rows


def build_spacetime_constraints(partition: SpaceTimePartition,
                                objects: ObjectSet, variant: str = "ce"):
    """Space-time coarse constraints per subdomain.

    Three families: (a) per object, the time average of the object restriction
    over the slab's interior steps; (b) per time interface, the subdomain mean
    value shared with the time neighbor; (c) per object and time interface,
    the object restriction pinned pointwise in time.  Family (a) rows are
    dropped (and logged) when K_n = 1 leaves them without any term.
    """
    objects = objects.select(variant)
    mesh, kn, pt = partition.mesh, partition.kn, partition.pt
    delta = mesh.delta
    out: dict[tuple[int, int], list[ConstraintRow]] = {}
    for n, s in partition.subdomains():
        g2l = partition.local_index(s)
        rows: list[ConstraintRow] = []

        for obj in objects.of_subdomain(s):
            locs, vals = _object_entries(obj, g2l, mesh.h)
            if kn == 1:
                log.warning(
                    "dropping degenerate time-averaged constraint for object "
                    "%s on subdomain (n=%d, s=%d): K_n = 1 has no interior steps",
                    obj.key, n, s)
            else:
                ks = np.arange(1, kn)
                rows.append(ConstraintRow(
                    kind=KIND_SPACE_AVG, key=("A", obj.key, n),
                    time_indices=np.repeat(ks, locs.size),
                    node_indices=np.tile(locs, kn - 1),
                    values=np.tile(delta * vals, kn - 1)))

        if pt > 1:
            lumped = partition.lumped_weights(s)
            all_locs = np.arange(lumped.size)
            if n >= 2:
                rows.append(ConstraintRow(
                    kind=KIND_TIME_MEAN, key=("B", s, n - 1),
                    time_indices=np.zeros(lumped.size, dtype=np.int64),
                    node_indices=all_locs, values=lumped.copy()))
            if n <= pt - 1:
                rows.append(ConstraintRow(
                    kind=KIND_TIME_MEAN, key=("B", s, n),
                    time_indices=np.full(lumped.size, kn),
                    node_indices=all_locs, values=lumped.copy()))

            for obj in objects.of_subdomain(s):
                locs, vals = _object_entries(obj, g2l, mesh.h)
                if n >= 2:
                    rows.append(ConstraintRow(
                        kind=KIND_TIME_OBJECT, key=("C", obj.key, n - 1),
                        time_indices=np.zeros(locs.size, dtype=np.int64),
                        node_indices=locs, values=vals))
                if n <= pt - 1:
                    rows.append(ConstraintRow(
                        kind=KIND_TIME_OBJECT, key=("C", obj.key, n),
                        time_indices=np.full(locs.size, kn),
                        node_indices=locs, values=vals))
        out[(n, s)] = rows
    return out


def global_coarse_numbering(constraints) -> dict[tuple, int]:
    """Deterministic global coarse-DOF ids from the constraint keys.

    Keys are sorted family by family (time-averaged object constraints, then
    interface means, then interface object values, then plain space objects),
    lexicographically within each family; the id map is independent of the
    subdomain traversal order.
    """
    families: dict[str, set] = {}
    for rows in constraints.values():
        for row in rows:
            families.setdefault(row.key[0], set()).add(row.key)
    numbering: dict[tuple, int] = {}
    for tag in sorted(families):
        for key in sorted(families[tag]):
            numbering[key] = len(numbering)
    return numbering
