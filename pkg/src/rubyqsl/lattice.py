"""Ruby-lattice geometry for arrays of blockaded three-site triangles.

Sites sit on the links of a kagome lattice, so every site has exactly two
kagome endpoints ("vertices") and belongs to exactly one strongly blockaded
triangle.  Occupied sites are read as dimers on the kagome links; most
geometric bookkeeping here (vertices, hexagons, string paths, tripartitions)
exists to support that dimer picture.

All coordinates are stored in integer "key" units: a site at position
(x, y) (in units of the nearest-neighbour spacing) has key
(kx, ky) = (2x, 2y/sqrt(3)).  Keys make every identity exact: midpoints,
wrapping, and squared distances (4*d^2 = dkx^2 + 3*dky^2) are integer
arithmetic, so distance classes never depend on floating-point binning.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

SQRT3 = math.sqrt(3.0)

# Cell vectors in key units.  One cell holds two triangles (six sites).
_CELL_A1 = (8, 0)
_CELL_A2 = (4, 4)

# Kagome-vertex keys of the two triangles of the cell at key origin (0, 0).
_UP_VERTICES = ((4, 0), (2, 2), (6, 2))
_DOWN_VERTICES = ((6, 2), (10, 2), (8, 4))

SHAPES = ("planar", "cylinder", "torus")


@dataclass(frozen=True)
class HoleSpec:
    """A puncture carved out of a planar lattice.

    ``n_triangles`` whole triangles nearest ``center`` (fractional position
    inside the bounding box, defaults to the middle) are removed.
    """

    n_triangles: int = 4
    center: tuple[float, float] | None = None


@dataclass(frozen=True)
class LatticeSpec:
    shape: str = "torus"
    extent: tuple[int, int] = (2, 2)
    spacing: float = 3.9
    trim_to: int | None = None
    hole: HoleSpec | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        nx, ny = self.extent
        if nx < 1 or ny < 1:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if self.trim_to is not None:
            if self.shape != "planar":
                raise ValueError("trimming is only defined for planar lattices")
            if not 1 <= self.trim_to <= 2 * nx * ny:
                raise ValueError("trim_to outside the available triangle count")
        if self.hole is not None and self.shape != "planar":
            raise ValueError("holes are only defined for planar lattices")


def lattice_preset(name: str) -> LatticeSpec:
    """Named lattice geometries used throughout the command-line presets."""
    presets = {
        "torus-24": LatticeSpec("torus", (2, 2)),
        "torus-48": LatticeSpec("torus", (2, 4)),
        "planar-72": LatticeSpec("planar", (4, 3)),
        "torus-72": LatticeSpec("torus", (4, 3)),
        "planar-288": LatticeSpec("planar", (8, 6)),
        "cylinder-288": LatticeSpec("cylinder", (8, 6)),
        "torus-288": LatticeSpec("torus", (8, 6)),
        # Flake matching the 219-atom experimental outline: a 7x7 cell field
        # trimmed to the 73 triangles nearest its centroid.
        "experiment-219": LatticeSpec("planar", (7, 7), trim_to=73),
        # Same construction with a four-triangle puncture: 99 - 4 triangles.
        "pierced-285": LatticeSpec("planar", (8, 8), trim_to=99, hole=HoleSpec(4)),
        # Reduced-scale pierced lattice for tests and quick runs.
        "pierced-84": LatticeSpec("planar", (4, 4), hole=HoleSpec(4)),
    }
    if name not in presets:
        raise ValueError(f"unknown lattice preset {name!r}; known: {sorted(presets)}")
    return presets[name]


@dataclass(frozen=True)
class StringPath:
    """A string operator path.

    P-kind paths list the crossed sites; the operator is the product of
    (1 - 2 n_i) over them.  Q-kind paths list (triangle, entry site,
    exit site) triples; the remaining site of each crossed triangle is the
    "axis" site on the kagome link joining the entry and exit vertices.
    ``enclosed_vertices`` counts the kagome vertices inside a closed path
    (the region whose boundary the crossed sites form, for P-kind).
    """

    kind: str  # "P" | "Q"
    closed: bool
    sites: tuple[int, ...] = ()
    triangles: tuple[tuple[int, int, int], ...] = ()
    enclosed_vertices: int | None = None
    region_vertices: tuple[int, ...] = ()
    template: str = "custom"

    def __post_init__(self):
        if self.kind not in ("P", "Q"):
            raise ValueError(f"string kind must be 'P' or 'Q', got {self.kind!r}")
        if self.kind == "P" and not self.sites:
            raise ValueError("empty P-kind path")
        if self.kind == "Q" and not self.triangles:
            raise ValueError("empty Q-kind path")


@dataclass(frozen=True)
class Tripartition:
    """Three disjoint bulk regions meeting at a single triple point."""

    a: tuple[int, ...]
    b: tuple[int, ...]
    c: tuple[int, ...]
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0

    def region(self, name: str) -> tuple[int, ...]:
        parts = {"A": self.a, "B": self.b, "C": self.c}
        sites: list[int] = []
        for label in name:
            if label not in parts:
                raise ValueError(f"unknown region label {label!r}")
            sites.extend(parts[label])
        return tuple(sorted(sites))

    @property
    def labels(self) -> tuple[str, ...]:
        return ("A", "B", "C", "AB", "BC", "CA", "ABC")


@dataclass
class DistanceTable:
    """Distance classes of unordered site pairs, binned exactly.

    ``distances`` are the representative pair distances in units of the
    nearest-neighbour spacing, ascending.  ``class_of`` maps a site pair to
    its class index (-1 on the diagonal).
    """

    distances: np.ndarray
    class_of: np.ndarray
    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.distances)


class RubyLattice:
    """A built lattice: sites, triangles, kagome vertices and derived maps."""

    def __init__(self, spec, site_keys, triangles, wrap_keys, hole_center=None,
                 n_holes=0):
        self.spec = spec
        self.site_keys = np.asarray(site_keys, dtype=np.int64)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.wrap_keys = np.asarray(wrap_keys, dtype=np.int64).reshape(-1, 2)
        self.hole_center = hole_center
        self.n_holes = n_holes
        self._finish()

    # -- construction helpers -------------------------------------------------

    def _finish(self):
        """Derive vertices, adjacency and boundary data from sites+triangles."""
        n = len(self.site_keys)
        if self.triangles.size and (np.sort(self.triangles.ravel())
                                    != np.arange(n)).any():
            raise ValueError("triangles must partition the site set")
        key_index = {tuple(k): i for i, k in enumerate(self.site_keys)}
        if len(key_index) != n:
            raise ValueError("duplicate site keys")

        vertex_sites: dict[tuple[int, int], set[int]] = {}
        self._tri_vertex_keys = []
        for tri in self.triangles:
            a, b, c = (self.site_keys[s] for s in tri)
            # a+b-c is the kagome vertex shared by the links carrying sites
            # tri[0] and tri[1] (exact in key units), and cyclically
            vks = (tuple(a + b - c), tuple(b + c - a), tuple(a + c - b))
            self._tri_vertex_keys.append(frozenset(self._reduce(k) for k in vks))
            for vk, pair in zip(vks, ((tri[0], tri[1]), (tri[1], tri[2]),
                                      (tri[0], tri[2]))):
                vertex_sites.setdefault(self._reduce(vk), set()).update(pair)

        self.vertex_keys = sorted(vertex_sites, key=lambda k: (k[1], k[0]))
        self._vertex_index = {k: i for i, k in enumerate(self.vertex_keys)}
        self.vertices = tuple(tuple(sorted(vertex_sites[k]))
                              for k in self.vertex_keys)

        self.site_vertices = np.full((n, 2), -1, dtype=np.int64)
        fill = np.zeros(n, dtype=np.int64)
        for vi, sites in enumerate(self.vertices):
            for s in sites:
                self.site_vertices[s, fill[s]] = vi
                fill[s] += 1
        if (fill != 2).any():
            raise ValueError("every site must join exactly two kagome vertices")

        self.site_triangle = np.empty(n, dtype=np.int64)
        for ti, tri in enumerate(self.triangles):
            self.site_triangle[tri] = ti
        self.vertex_triangles = tuple(
            tuple(sorted({int(self.site_triangle[s]) for s in sites}))
            for sites in self.vertices)

        self._tri_by_vertex_set = {vk: ti for ti, vk
                                   in enumerate(self._tri_vertex_keys)}
        self.boundary_vertices = np.array(
            [len(s) < 4 for s in self.vertices], dtype=bool)
        self.boundary_sites = self.boundary_vertices[self.site_vertices].any(axis=1)
        self._build_hexagons()

    def _reduce(self, key) -> tuple[int, int]:
        """Canonical representative of a key under the periodic wraps."""
        kx, ky = int(key[0]), int(key[1])
        nx, ny = self.spec.extent
        if self.spec.shape == "torus":
            m2 = ky // (4 * ny)
            ky -= 4 * ny * m2
            kx -= 4 * ny * m2
            kx %= 8 * nx
        elif self.spec.shape == "cylinder":
            kx %= 8 * nx
        return (kx, ky)

    def _build_hexagons(self):
        """Hexagonal kagome faces with all six surrounding triangles present."""
        corner_off = [(4, 0), (2, 2), (-2, 2), (-4, 0), (-2, -2), (2, -2)]
        nx, ny = self.spec.extent
        centers = set()
        for tri_vk in self._tri_vertex_keys:
            for vk in tri_vk:
                for dx, dy in corner_off:
                    centers.add(self._reduce((vk[0] - dx, vk[1] - dy)))
        hexagons = []
        for o in sorted(centers, key=lambda k: (k[1], k[0])):
            corners = [(o[0] + dx, o[1] + dy) for dx, dy in corner_off]
            corner_ids = [self._vertex_index.get(self._reduce(c)) for c in corners]
            if any(ci is None for ci in corner_ids):
                continue
            tris, edge_sites, outer_pairs = [], [], []
            ok = True
            for k in range(6):
                ca, cb = corners[k], corners[(k + 1) % 6]
                w = (ca[0] + cb[0] - o[0], ca[1] + cb[1] - o[1])
                vset = frozenset(self._reduce(v) for v in (ca, cb, w))
                ti = self._tri_by_vertex_set.get(vset)
                if ti is None:
                    ok = False
                    break
                tris.append(ti)
                edge = self._site_at_midpoint(ca, cb)
                fa = self._site_at_midpoint(ca, w)
                fb = self._site_at_midpoint(cb, w)
                if None in (edge, fa, fb):
                    ok = False
                    break
                edge_sites.append(edge)
                outer_pairs.append((fa, fb))
            if ok and len(set(tris)) == 6:
                hexagons.append({
                    "center": o,
                    "corners": tuple(corner_ids),
                    "triangles": tuple(tris),
                    "edge_sites": tuple(edge_sites),
                    "outer_pairs": tuple(outer_pairs),
                })
        self.hexagons = tuple(hexagons)

    def _site_at_midpoint(self, ka, kb):
        mid = self._reduce(((ka[0] + kb[0]) // 2, (ka[1] + kb[1]) // 2))
        matches = np.flatnonzero((self.site_keys[:, 0] == mid[0])
                                 & (self.site_keys[:, 1] == mid[1]))
        return int(matches[0]) if len(matches) else None

    # -- basic queries ---------------------------------------------------------

    @property
    def n_sites(self) -> int:
        return len(self.site_keys)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def genus(self) -> int:
        return self.n_holes

    @property
    def positions(self) -> np.ndarray:
        """Site positions in units of the nearest-neighbour spacing."""
        pos = np.empty((self.n_sites, 2), dtype=float)
        pos[:, 0] = self.site_keys[:, 0] / 2.0
        pos[:, 1] = self.site_keys[:, 1] * (SQRT3 / 2.0)
        return pos

    @property
    def vertex_positions(self) -> np.ndarray:
        keys = np.asarray(self.vertex_keys, dtype=np.int64)
        pos = np.empty((len(keys), 2), dtype=float)
        pos[:, 0] = keys[:, 0] / 2.0
        pos[:, 1] = keys[:, 1] * (SQRT3 / 2.0)
        return pos

    @property
    def wrap_vectors(self) -> np.ndarray:
        """Periodic translations in position units (possibly empty)."""
        w = np.empty((len(self.wrap_keys), 2), dtype=float)
        if len(self.wrap_keys):
            w[:, 0] = self.wrap_keys[:, 0] / 2.0
            w[:, 1] = self.wrap_keys[:, 1] * (SQRT3 / 2.0)
        return w

    def min_image_deltas(self, deltas: np.ndarray) -> np.ndarray:
        """Shortest periodic images of displacement vectors."""
        deltas = np.asarray(deltas, dtype=float)
        if not len(self.wrap_keys):
            return deltas
        best = deltas.copy()
        bestn = np.einsum("...i,...i->...", best, best)
        wraps = self.wrap_vectors
        rng = range(-2, 3)
        for m1 in rng:
            for m2 in (rng if len(wraps) > 1 else [0]):
                shift = m1 * wraps[0] + (m2 * wraps[1] if len(wraps) > 1 else 0.0)
                cand = deltas + shift
                n = np.einsum("...i,...i->...", cand, cand)
                take = n < bestn - 1e-12
                best[take] = cand[take]
                bestn[take] = n[take]
        return best

    def pair_dist2_keys(self) -> np.ndarray:
        """4*d^2 between all site pairs as exact integers (minimum image)."""
        k = self.site_keys
        d = k[:, None, :] - k[None, :, :]
        if len(self.wrap_keys):
            cands = []
            rng = range(-2, 3)
            for m1 in rng:
                for m2 in (rng if len(self.wrap_keys) > 1 else [0]):
                    shift = m1 * self.wrap_keys[0]
                    if len(self.wrap_keys) > 1:
                        shift = shift + m2 * self.wrap_keys[1]
                    dd = d + shift
                    cands.append(dd[..., 0] ** 2 + 3 * dd[..., 1] ** 2)
            return np.minimum.reduce(cands)
        return d[..., 0] ** 2 + 3 * d[..., 1] ** 2

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.spec).encode())
        h.update(self.site_keys.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:16]

    # -- bulk selection --------------------------------------------------------

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest boundary site (inf if none)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        b = self.positions[self.boundary_sites]
        if not len(b):
            return np.full(len(points), np.inf)
        d = self.min_image_deltas(points[:, None, :] - b[None, :, :])
        return np.sqrt(np.einsum("...i,...i->...", d, d)).min(axis=1)

    def bulk_sites(self, margin: float = 4.0) -> np.ndarray:
        return np.flatnonzero(self.boundary_distance(self.positions) > margin)

    def bulk_vertices(self, margin: float = 4.0) -> np.ndarray:
        return np.flatnonzero(self.boundary_distance(self.vertex_positions) > margin)

    def bulk_hexagons(self, margin: float = 4.0) -> list[int]:
        if not self.hexagons:
            return []
        centers = np.array([[h["center"][0] / 2.0,
                             h["center"][1] * SQRT3 / 2.0] for h in self.hexagons])
        d = self.boundary_distance(centers)
        return [i for i in range(len(self.hexagons)) if d[i] > margin]

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


def build_lattice(spec: LatticeSpec) -> RubyLattice:
    """Construct the lattice described by ``spec``.

    Sites are ordered by (ky, kx) key; triangle-local site order is ascending
    site index, which fixes the meaning of the four local triangle states used
    everywhere else.
    """
    nx, ny = spec.extent
    if spec.shape == "torus":
        wraps = [(8 * nx, 0), (4 * ny, 4 * ny)]
    elif spec.shape == "cylinder":
        wraps = [(8 * nx, 0)]
    else:
        wraps = []

    proto = RubyLattice.__new__(RubyLattice)
    proto.spec = spec  # only _reduce is needed during assembly

    tri_site_keys = []
    for j in range(ny):
        for i in range(nx):
            o = (8 * i + 4 * j, 4 * j)
            for verts in (_UP_VERTICES, _DOWN_VERTICES):
                vk = [(o[0] + v[0], o[1] + v[1]) for v in verts]
                mids = [((vk[a][0] + vk[b][0]) // 2, (vk[a][1] + vk[b][1]) // 2)
                        for a, b in ((0, 1), (1, 2), (0, 2))]
                tri_site_keys.append(tuple(proto._reduce(m) for m in mids))

    if spec.trim_to is not None or spec.hole is not None:
        tri_site_keys = _trim_triangles(spec, tri_site_keys)
        hole_center, n_holes, tri_site_keys = _carve_hole(spec, tri_site_keys)
    else:
        hole_center, n_holes = None, 0

    all_keys = sorted({k for tri in tri_site_keys for k in tri},
                      key=lambda k: (k[1], k[0]))
    index = {k: i for i, k in enumerate(all_keys)}
    triangles = [tuple(sorted(index[k] for k in tri)) for tri in tri_site_keys]
    triangles.sort()
    return RubyLattice(spec, all_keys, triangles, wraps,
                       hole_center=hole_center, n_holes=n_holes)


def _tri_center(tri_keys) -> np.ndarray:
    k = np.asarray(tri_keys, dtype=float)
    return np.array([k[:, 0].mean() / 2.0, k[:, 1].mean() * SQRT3 / 2.0])


def _trim_triangles(spec, tri_site_keys):
    if spec.trim_to is None:
        return tri_site_keys
    centers = np.array([_tri_center(t) for t in tri_site_keys])
    centroid = centers.mean(axis=0)
    d2 = ((centers - centroid) ** 2).sum(axis=1)
    order = sorted(range(len(tri_site_keys)),
                   key=lambda t: (round(d2[t], 9), tri_site_keys[t]))
    keep = sorted(order[:spec.trim_to])
    return [tri_site_keys[t] for t in keep]


def _carve_hole(spec, tri_site_keys):
    if spec.hole is None:
        return None, 0, tri_site_keys
    centers = np.array([_tri_center(t) for t in tri_site_keys])
    if spec.hole.center is None:
        target = centers.mean(axis=0)
    else:
        lo, hi = centers.min(axis=0), centers.max(axis=0)
        target = lo + np.asarray(spec.hole.center) * (hi - lo)
    d2 = ((centers - target) ** 2).sum(axis=1)
    order = sorted(range(len(tri_site_keys)),
                   key=lambda t: (round(d2[t], 9), tri_site_keys[t]))
    removed = set(order[:spec.hole.n_triangles])

    # the puncture must sit strictly inside: removed triangles may not share a
    # vertex with the outer boundary region
    removed_keys = {k for t in removed for k in tri_site_keys[t]}
    kept = [tri_site_keys[t] for t in range(len(tri_site_keys))
            if t not in removed]
    if not kept:
        raise ValueError("hole removes the entire lattice")
    probe = RubyLattice(replace(spec, trim_to=None, hole=None),
                        sorted({k for t in tri_site_keys for k in t},
                               key=lambda k: (k[1], k[0])),
                        _index_triangles(tri_site_keys),
                        np.zeros((0, 2)))
    kidx = {tuple(k): i for i, k in enumerate(probe.site_keys)}
    for k in removed_keys:
        if probe.boundary_sites[kidx[k]]:
            raise ValueError("extent too small to contain the hole in the bulk")
    hole_center = tuple(np.mean([_tri_center(tri_site_keys[t])
                                 for t in removed], axis=0))
    return hole_center, 1, kept


def _index_triangles(tri_site_keys):
    all_keys = sorted({k for tri in tri_site_keys for k in tri},
                      key=lambda k: (k[1], k[0]))
    index = {k: i for i, k in enumerate(all_keys)}
    tris = [tuple(sorted(index[k] for k in tri)) for tri in tri_site_keys]
    tris.sort()
    return tris


# -- distance classes ---------------------------------------------------------


def distance_classes(lat: RubyLattice, rel_tol: float = 1e-9) -> DistanceTable:
    """Bin all site pairs by distance.

    Distances are exact integers in key units, so the binning is exact; the
    ``rel_tol`` parameter only merges classes whose representative distances
    fall within the tolerance (never needed on the lattices built here).
    """
    q = lat.pair_dist2_keys()
    n = lat.n_sites
    iu = np.triu_indices(n, k=1)
    vals = np.unique(q[iu])
    dists = np.sqrt(vals / 4.0)
    # merge any accidental near-duplicates per the stated tolerance
    reps: list[float] = []
    val_to_class = {}
    for v, dval in zip(vals, dists):
        if reps and (dval - reps[-1]) <= rel_tol * max(1.0, dval):
            val_to_class[int(v)] = len(reps) - 1
        else:
            val_to_class[int(v)] = len(reps)
            reps.append(dval)
    class_of = np.full((n, n), -1, dtype=np.int32)
    lut = np.vectorize(val_to_class.__getitem__, otypes=[np.int32])
    class_of[iu] = lut(q[iu])
    class_of[(iu[1], iu[0])] = class_of[iu]
    counts = np.bincount(class_of[iu], minlength=len(reps))
    return DistanceTable(distances=np.array(reps), class_of=class_of,
                         counts=counts)


def vertex_sharing_matrix(lat: RubyLattice) -> np.ndarray:
    """Boolean (N, N) matrix: do two sites join the same kagome vertex."""
    n = lat.n_sites
    chi = np.zeros((n, n), dtype=bool)
    for sites in lat.vertices:
        for a in sites:
            for b in sites:
                if a != b:
                    chi[a, b] = True
    return chi


# -- string paths -------------------------------------------------------------


def _hexagon_auto(lat: RubyLattice, margin: float | None = None) -> int:
    if not lat.hexagons:
        raise ValueError("lattice has no complete hexagonal faces")
    bulk = lat.bulk_hexagons(4.0) or list(range(len(lat.hexagons)))
    cen = lat.centroid()
    centers = np.array([[lat.hexagons[i]["center"][0] / 2.0,
                         lat.hexagons[i]["center"][1] * SQRT3 / 2.0]
                        for i in bulk])
    d = lat.min_image_deltas(centers - cen)
    return bulk[int(np.argmin(np.einsum("ij,ij->i", d, d)))]


def _hexagon_path(lat: RubyLattice, kind: str, hexagon: int,
                  start: int = 0, length: int = 6, closed: bool = True,
                  template: str = "hexagon-loop") -> StringPath:
    h = lat.hexagons[hexagon]
    idx = [(start + k) % 6 for k in range(length)]
    if kind == "P":
        sites: list[int] = []
        for k in idx:
            sites.extend(h["outer_pairs"][k])
        enclosed = len(set(h["corners"])) if closed else None
        region = h["corners"] if closed else ()
        return StringPath(kind="P", closed=closed, sites=tuple(sites),
                          enclosed_vertices=enclosed, region_vertices=region,
                          template=template)
    triples = tuple((h["triangles"][k], h["outer_pairs"][k][0],
                     h["outer_pairs"][k][1]) for k in idx)
    return StringPath(kind="Q", closed=closed, triangles=triples,
                      enclosed_vertices=0 if closed else None,
                      template=template)


def _dual_loop(lat: RubyLattice, kind: str, vertex: int | None) -> StringPath:
    if kind != "P":
        raise ValueError("dual-loop paths around one vertex exist only as "
                         "P-kind strings")
    if vertex is None:
        bulk = lat.bulk_vertices(4.0)
        cand = bulk if len(bulk) else np.arange(lat.n_vertices)
        cand = [v for v in cand if len(lat.vertices[v]) == 4]
        if not cand:
            raise ValueError("no four-link vertex available for a dual loop")
        cen = lat.centroid()
        pos = lat.vertex_positions[cand]
        d = lat.min_image_deltas(pos - cen)
        vertex = int(cand[int(np.argmin(np.einsum("ij,ij->i", d, d)))])
    sites = lat.vertices[vertex]
    if len(sites) != 4:
        raise ValueError("dual loop requires a vertex with four links")
    vp = lat.vertex_positions[vertex]
    rel = lat.min_image_deltas(lat.positions[list(sites)] - vp)
    order = np.argsort(np.arctan2(rel[:, 1], rel[:, 0]))
    return StringPath(kind="P", closed=True,
                      sites=tuple(int(sites[o]) for o in order),
                      enclosed_vertices=1, region_vertices=(vertex,),
                      template="dual-loop")


def region_boundary_path(lat: RubyLattice, vertex_ids) -> StringPath:
    """Closed P-kind path from a region of kagome vertices.

    The crossed sites are the kagome links with exactly one endpoint inside
    the region, and the enclosed-vertex count is the region size.
    """
    region = sorted(set(int(v) for v in vertex_ids))
    if not region:
        raise ValueError("empty vertex region")
    inside = np.zeros(lat.n_vertices, dtype=bool)
    inside[region] = True
    crossed = np.flatnonzero(inside[lat.site_vertices].sum(axis=1) == 1)
    if not len(crossed):
        raise ValueError("region has no boundary links")
    return StringPath(kind="P", closed=True, sites=tuple(int(s) for s in crossed),
                      enclosed_vertices=len(region),
                      region_vertices=tuple(region), template="region")


def _triangle_adjacency(lat: RubyLattice):
    """Neighbour triangles through shared interior vertices."""
    adj: dict[int, list[tuple[int, int]]] = {t: [] for t in range(lat.n_triangles)}
    for v, tris in enumerate(lat.vertex_triangles):
        if len(tris) == 2:
            a, b = tris
            adj[a].append((b, v))
            adj[b].append((a, v))
    return adj


def _connecting_site(lat: RubyLattice, tri: int, va: int, vb: int) -> int:
    """The site of ``tri`` on the kagome link joining vertices va and vb."""
    for s in lat.triangles[tri]:
        sv = set(lat.site_vertices[s])
        if sv == {va, vb}:
            return int(s)
    raise ValueError("vertices are not joined by a link of this triangle")


def _entry_exit_sites(lat: RubyLattice, tri: int, v_in: int, v_out: int):
    """Entry/exit sites crossed when a string runs v_in -> v_out through tri."""
    entry = exit_ = None
    axis = _connecting_site(lat, tri, v_in, v_out)
    for s in lat.triangles[tri]:
        if s == axis:
            continue
        sv = set(lat.site_vertices[s])
        if v_in in sv:
            entry = int(s)
        elif v_out in sv:
            exit_ = int(s)
    if entry is None or exit_ is None:
        raise ValueError("degenerate triangle crossing")
    return entry, exit_


def _vertex_sequence_to_q_path(lat: RubyLattice, tris, verts, closed,
                               template) -> StringPath:
    """Q-kind path from a triangle walk; verts[k] is the entry vertex of
    tris[k] (shared with the previous triangle on the walk)."""
    triples = []
    m = len(tris)
    for k in range(m):
        v_in = verts[k]
        v_out = verts[(k + 1) % m]
        entry, exit_ = _entry_exit_sites(lat, tris[k], v_in, v_out)
        triples.append((int(tris[k]), entry, exit_))
    return StringPath(kind="Q", closed=closed, triangles=tuple(triples),
                      enclosed_vertices=None, template=template)


def _loop_around_hole(lat: RubyLattice) -> StringPath:
    """Closed Q-kind path winding once around the puncture.

    Shortest loop with winding number one, found by breadth-first search on
    the triangle-adjacency graph lifted by the crossing count of a cut ray
    drawn from the hole centre.
    """
    if lat.hole_center is None:
        raise ValueError("logical strings require a lattice with a hole")
    hc = np.asarray(lat.hole_center, dtype=float)
    adj = _triangle_adjacency(lat)
    centers = np.array([lat.positions[tri].mean(axis=0)
                        for tri in lat.triangles])
    radii = np.hypot(*(centers - hc).T)
    start = int(np.argmin(radii))
    for nudge in (0.0137, 0.1622, 0.3471):
        loop = _winding_bfs(adj, centers, hc, start, nudge)
        if loop is not None:
            tris, verts = loop
            return _vertex_sequence_to_q_path(lat, tris, verts, True,
                                              "logical-X")
    raise ValueError("could not close a loop around the hole")


def _winding_bfs(adj, centers, hc, start, nudge):
    u = np.array([math.cos(nudge), math.sin(nudge)])

    def ray_crossing(a, b):
        # signed crossing of segment a->b with the ray hc + t*u, t > 0
        d = b - a
        det = u[0] * (-d[1]) - u[1] * (-d[0])
        if abs(det) < 1e-12:
            return 0
        rhs = a - hc
        t = (rhs[0] * (-d[1]) - rhs[1] * (-d[0])) / det
        s = (u[0] * rhs[1] - u[1] * rhs[0]) / det
        if t <= 1e-9 or not (1e-9 < s < 1 - 1e-9):
            return 0
        return 1 if (u[0] * d[1] - u[1] * d[0]) > 0 else -1

    # states (triangle, accumulated crossing count); search for the shortest
    # return to the start with net count +-1
    from collections import deque

    init = (start, 0)
    prev_state: dict[tuple[int, int], tuple[tuple[int, int], int]] = {init: (None, -1)}
    queue = deque([init])
    goal = None
    while queue and goal is None:
        tri, w = queue.popleft()
        for (nb, v) in adj[tri]:
            dw = ray_crossing(centers[tri], centers[nb])
            state = (nb, w + dw)
            if abs(state[1]) > 1 or state in prev_state:
                continue
            prev_state[state] = ((tri, w), v)
            if nb == start and abs(state[1]) == 1:
                goal = state
                break
            queue.append(state)
    if goal is None:
        return None
    tris, verts = [], []
    state = goal
    while prev_state[state][0] is not None:
        parent, v = prev_state[state]
        tris.append(state[0])
        verts.append(v)
        state = parent
    tris.reverse()
    verts.reverse()
    # tris ends on start == tris begins; drop the duplicate closing entry
    tris = [start] + tris[:-1]
    # verts[k] now joins tris[k] and tris[k+1] (wrapping); shift so verts[k]
    # is the entry vertex of tris[k]
    verts = [verts[-1]] + verts[:-1]
    if len(set(tris)) != len(tris):
        return None
    return tris, verts


def _ray_cut_path(lat: RubyLattice, j: int = 1, n_dirs: int = 3) -> StringPath:
    """Open P-kind path: links crossed by a ray from the hole to the outside."""
    if lat.hole_center is None:
        raise ValueError("logical strings require a lattice with a hole")
    if not 1 <= j <= n_dirs:
        raise ValueError(f"direction index j must be in 1..{n_dirs}")
    hc = np.asarray(lat.hole_center, dtype=float)
    span = np.abs(lat.positions - hc).max() * 3.0 + 10.0
    vp = lat.vertex_positions
    pos = lat.positions
    for nudge in (0.0123, 0.0371, 0.0571, 0.0917):
        theta = 2.0 * math.pi * (j - 1) / n_dirs + nudge
        u = np.array([math.cos(theta), math.sin(theta)])
        a, b = hc, hc + span * u
        crossed = []
        degenerate = False
        for s in range(lat.n_sites):
            va, vb = lat.site_vertices[s]
            hit = _segments_cross(a, b, vp[va], vp[vb])
            if hit is None:
                degenerate = True
                break
            if hit:
                t = np.dot(pos[s] - hc, u)
                crossed.append((t, s))
        if degenerate or not crossed:
            continue
        crossed.sort()
        return StringPath(kind="P", closed=False,
                          sites=tuple(s for _, s in crossed),
                          template="logical-Z")
    raise ValueError("could not draw a non-degenerate cut from the hole")


def _segments_cross(a, b, c, d, eps=1e-9):
    """Proper intersection test; None flags a degenerate (touching) case."""

    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    if min(abs(o1), abs(o2)) < eps and max(abs(o1), abs(o2)) > eps:
        return None
    if abs(o3) < eps or abs(o4) < eps:
        return None
    return (o1 > 0) != (o2 > 0) and (o3 > 0) != (o4 > 0)


def make_string(lat: RubyLattice, kind: str, template: str, **kwargs) -> StringPath:
    """Build a string path from a named template.

    Templates: ``hexagon-loop``, ``half-hexagon-open``, ``dual-loop``,
    ``logical-X``, ``logical-Z`` (direction ``j``), ``region`` (P-kind closed
    boundary of a set of vertices) and ``custom`` (explicit ``sites`` or
    ``triangles``).
    """
    if kind not in ("P", "Q"):
        raise ValueError(f"string kind must be 'P' or 'Q', got {kind!r}")
    if template == "hexagon-loop":
        hexagon = kwargs.pop("hexagon", None)
        if hexagon is None:
            hexagon = _hexagon_auto(lat)
        _reject_extra(kwargs)
        return _hexagon_path(lat, kind, hexagon)
    if template == "half-hexagon-open":
        hexagon = kwargs.pop("hexagon", None)
        start = kwargs.pop("start", 0)
        if hexagon is None:
            hexagon = _hexagon_auto(lat)
        _reject_extra(kwargs)
        return _hexagon_path(lat, kind, hexagon, start=start, length=3,
                             closed=False, template="half-hexagon-open")
    if template == "dual-loop":
        vertex = kwargs.pop("vertex", None)
        _reject_extra(kwargs)
        return _dual_loop(lat, kind, vertex)
    if template == "region":
        vertices = kwargs.pop("vertices")
        _reject_extra(kwargs)
        if kind != "P":
            raise ValueError("region boundaries exist only as P-kind strings")
        return region_boundary_path(lat, vertices)
    if template == "logical-X":
        _reject_extra(kwargs)
        if kind != "Q":
            raise ValueError("logical-X is a Q-kind loop")
        return _loop_around_hole(lat)
    if template == "logical-Z":
        j = kwargs.pop("j", 1)
        n_dirs = kwargs.pop("n_dirs", 3)
        _reject_extra(kwargs)
        if kind != "P":
            raise ValueError("logical-Z is a P-kind string")
        return _ray_cut_path(lat, j=j, n_dirs=n_dirs)
    if template == "custom":
        sites = kwargs.pop("sites", ())
        triangles = kwargs.pop("triangles", ())
        closed = kwargs.pop("closed", False)
        enclosed = kwargs.pop("enclosed_vertices", None)
        _reject_extra(kwargs)
        path = StringPath(kind=kind, closed=closed,
                          sites=tuple(int(s) for s in sites),
                          triangles=tuple((int(t), int(a), int(b))
                                          for t, a, b in triangles),
                          enclosed_vertices=enclosed)
        validate_path(lat, path)
        return path
    raise ValueError(f"unknown string template {template!r}")


def _reject_extra(kwargs):
    if kwargs:
        raise ValueError(f"unexpected template arguments: {sorted(kwargs)}")


def validate_path(lat: RubyLattice, path: StringPath):
    """Structural checks shared by all Q-kind paths (and P-site membership)."""
    for s in path.sites:
        if not 0 <= s < lat.n_sites:
            raise ValueError(f"site {s} outside lattice")
    if path.kind == "P" and len(set(path.sites)) != len(path.sites):
        raise ValueError("each crossed site may appear only once on a P path")
    prev_exit_vertex = None
    first_entry_vertex = None
    for (t, entry, exit_) in path.triangles:
        tri = set(int(x) for x in lat.triangles[t])
        if entry == exit_:
            raise ValueError("entry and exit must differ within each triangle")
        if entry not in tri or exit_ not in tri:
            raise ValueError("entry/exit sites must belong to the triangle")
        v_in, v_out = crossing_vertices(lat, t, entry, exit_)
        if first_entry_vertex is None:
            first_entry_vertex = v_in
        if prev_exit_vertex is not None and v_in != prev_exit_vertex:
            raise ValueError("consecutive crossed triangles must share the "
                             "crossing vertex")
        prev_exit_vertex = v_out
    if path.kind == "Q" and path.closed and len(path.triangles) > 1:
        if prev_exit_vertex != first_entry_vertex:
            raise ValueError("closed Q path must return to its entry vertex")


def crossing_vertices(lat: RubyLattice, t: int, entry: int,
                      exit_: int) -> tuple[int, int]:
    """Entry and exit kagome vertices of a crossed triangle.

    The axis site sits on the link joining them, so each is the vertex the
    entry (exit) site shares with the axis site.
    """
    axis = q_axis_site(lat, t, entry, exit_)
    sv_axis = set(int(v) for v in lat.site_vertices[axis])
    v_in = sv_axis & set(int(v) for v in lat.site_vertices[entry])
    v_out = sv_axis & set(int(v) for v in lat.site_vertices[exit_])
    if len(v_in) != 1 or len(v_out) != 1:
        raise ValueError("could not resolve the crossing vertices")
    return v_in.pop(), v_out.pop()


def q_axis_site(lat: RubyLattice, t: int, entry: int, exit_: int) -> int:
    """The remaining (axis) site of a crossed triangle."""
    for s in lat.triangles[t]:
        if s != entry and s != exit_:
            return int(s)
    raise ValueError("triangle does not contain distinct entry/exit sites")


# -- tripartition -------------------------------------------------------------


def make_tripartition(lat: RubyLattice, center=None, radius: float | None = None,
                      margin: float = 0.5, angle_offset: float = 0.0) -> Tripartition:
    """Split a bulk disk into three 120-degree wedges around its centre.

    Raises if no admissible disk exists (everything is boundary, the radius
    collides with the boundary, or a wedge comes out empty).
    """
    if center is None:
        if lat.boundary_sites.any():
            interior = ~lat.boundary_sites
            if not interior.any():
                raise ValueError("no admissible bulk disk on this lattice")
            center = lat.positions[interior].mean(axis=0)
        else:
            center = lat.centroid() + np.array([0.25, 0.25])
    center = np.asarray(center, dtype=float)

    if lat.boundary_sites.any():
        limit = float(lat.boundary_distance(center)[0])
    else:
        w = lat.wrap_vectors
        limit = 0.5 * min(np.hypot(*w.T)) if len(w) else np.inf
    if radius is None:
        radius = limit - margin
    if radius <= 0 or radius + margin > limit + 1e-9:
        raise ValueError("no admissible bulk disk: radius collides with the "
                         "boundary or the periodic wrap")

    rel = lat.min_image_deltas(lat.positions - center)
    dist = np.hypot(rel[:, 0], rel[:, 1])
    ang = (np.arctan2(rel[:, 1], rel[:, 0]) - angle_offset) % (2 * math.pi)
    inside = dist <= radius
    regions = {"a": [], "b": [], "c": []}
    for s in np.flatnonzero(inside):
        w = int(ang[s] // (2 * math.pi / 3))
        regions["abc"[min(w, 2)]].append(int(s))
    tp = Tripartition(a=tuple(regions["a"]), b=tuple(regions["b"]),
                      c=tuple(regions["c"]), center=tuple(center),
                      radius=float(radius))
    _check_tripartition(lat, tp)
    return tp


def _check_tripartition(lat: RubyLattice, tp: Tripartition):
    parts = [tp.a, tp.b, tp.c]
    if any(len(p) == 0 for p in parts):
        raise ValueError("tripartition has an empty region")
    allsites = [s for p in parts for s in p]
    if len(set(allsites)) != len(allsites):
        raise ValueError("tripartition regions overlap")
    chi = vertex_sharing_matrix(lat)
    union = sorted(allsites)
    if not _connected(union, chi, lat):
        raise ValueError("tripartition union is disconnected")
    for x, y in (("a", "b"), ("b", "c"), ("c", "a")):
        px, py = getattr(tp, x), getattr(tp, y)
        touch = any(chi[i, j] or lat.site_triangle[i] == lat.site_triangle[j]
                    for i in px for j in py)
        if not touch:
            raise ValueError(f"regions {x}/{y} do not meet at the triple point")


def _connected(sites, chi, lat) -> bool:
    if not sites:
        return False
    sset = set(sites)
    seen = {sites[0]}
    stack = [sites[0]]
    while stack:
        s = stack.pop()
        for t in sset:
            if t not in seen and (chi[s, t]
                                  or lat.site_triangle[s] == lat.site_triangle[t]):
                seen.add(t)
                stack.append(t)
    return len(seen) == len(sset)


# -- text export / import -----------------------------------------------------


def export_text(lat: RubyLattice) -> str:
    """Plain-text serialization (sites, triangles, wraps); derived structures
    are rebuilt on import, so the round trip is exact."""
    lines = ["# ruby lattice text format", "version 1",
             f"shape {lat.spec.shape}",
             f"extent {lat.spec.extent[0]} {lat.spec.extent[1]}",
             f"spacing {lat.spec.spacing!r}",
             f"trim {lat.spec.trim_to if lat.spec.trim_to is not None else '-'}",
             f"holes {lat.n_holes}"]
    if lat.hole_center is not None:
        lines.append(f"hole_center {lat.hole_center[0]!r} {lat.hole_center[1]!r}")
    for w in lat.wrap_keys:
        lines.append(f"wrap {w[0]} {w[1]}")
    lines.append(f"sites {lat.n_sites}")
    for i, (kx, ky) in enumerate(lat.site_keys):
        lines.append(f"site {i} {kx} {ky}")
    lines.append(f"triangles {lat.n_triangles}")
    for i, tri in enumerate(lat.triangles):
        lines.append(f"triangle {i} {tri[0]} {tri[1]} {tri[2]}")
    return "\n".join(lines) + "\n"


def import_text(text: str) -> RubyLattice:
    fields: dict[str, list[list[str]]] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        fields.setdefault(tok[0], []).append(tok[1:])
    try:
        version = int(fields["version"][0][0])
        if version != 1:
            raise ValueError(f"unsupported lattice text version {version}")
        shape = fields["shape"][0][0]
        extent = tuple(int(v) for v in fields["extent"][0])
        spacing = float(fields["spacing"][0][0])
        trim = fields["trim"][0][0]
        trim_to = None if trim == "-" else int(trim)
        n_holes = int(fields["holes"][0][0])
        hole_center = None
        if "hole_center" in fields:
            hole_center = tuple(float(v) for v in fields["hole_center"][0])
        wraps = [tuple(int(v) for v in w) for w in fields.get("wrap", [])]
        sites = sorted((int(r[0]), (int(r[1]), int(r[2]))) for r in fields["site"])
        site_keys = [k for _, k in sites]
        tris = sorted((int(r[0]), tuple(int(v) for v in r[1:]))
                      for r in fields["triangle"])
        triangles = [t for _, t in tris]
    except (KeyError, IndexError) as exc:
        raise ValueError(f"malformed lattice text: missing {exc}") from exc
    spec = LatticeSpec(shape=shape, extent=extent, spacing=spacing,
                       trim_to=trim_to,
                       hole=HoleSpec(4) if n_holes else None)
    return RubyLattice(spec, site_keys, triangles, wraps,
                       hole_center=hole_center, n_holes=n_holes)
