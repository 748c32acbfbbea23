"""
shape_space.py
Metric shape space: TSDF volumes, mesh <-> TSDF conversion, marching cubes,
latent codes on the unit hypersphere, geometric medians and a latent/TSDF
codebook standing in for the decoder.

TSDF convention: negative inside, clamped to [-truncation, +truncation];
node (i, j, k) sits at origin + (i, j, k) * voxel_size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import orjson
import trimesh
from scipy.spatial.distance import directed_hausdorff

from src.core.errors import EmptySurfaceError, GeometryDomainError, NonConvergenceError, SignAmbiguityError
from src.core.schemas.shape_schema import CLASS_TAGS, CodebookIndex, CodebookIndexEntry
from src.core.tools.mc_tables import CUBE_OFFSETS, EDGE_VERTICES, MC_TRIANGLES
from src.core.tools.mesh_io import read_tsdf, write_tsdf

logger = logging.getLogger(__name__)

DEFAULT_DIMS = (128, 128, 256)
TRUNCATION_VOXELS = 3.0
LATENT_EPS = 1e-12
DEGENERATE_AREA = 1e-12
CODEBOOK_TIE_TOL = 1e-12
CODEBOOK_INDEX = "index.json"

# sub-voxel offset keeping parity rays off shared edges and vertices
_RAY_JITTER = np.array([math.sqrt(2.0), math.sqrt(3.0)]) * 1e-7


# ==========================
# Types
# ==========================

@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise GeometryDomainError("triangle index out of range")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise GeometryDomainError("one color per vertex expected")

    @property
    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def signed_volume(self) -> float:
        """Positive for a closed mesh with outward winding."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def extents(self) -> np.ndarray:
        lo, hi = self.bounds
        return hi - lo

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted, unit length; isolated vertices get zero."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        face_n = np.cross(b - a, c - a)
        normals = np.zeros_like(self.vertices)
        for i in range(3):
            np.add.at(normals, self.triangles[:, i], face_n)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        return np.divide(normals, norm, out=np.zeros_like(normals), where=norm > 0)

    def with_colors(self, colors: np.ndarray) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.triangles.copy(), colors)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        verts = self.vertices @ np.asarray(rotation, dtype=float).T + np.asarray(translation, dtype=float)
        return TriMesh(verts, self.triangles.copy(), None if self.colors is None else self.colors.copy())

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices, faces=self.triangles, process=False)


@dataclass(frozen=True)
class TsdfGrid:
    values: np.ndarray
    voxel_size: float
    origin: np.ndarray
    truncation: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 3 or min(values.shape) < 1:
            raise GeometryDomainError(f"TSDF needs three positive dims, got {values.shape}")
        if self.voxel_size <= 0 or self.truncation <= 0:
            raise GeometryDomainError("voxel_size and truncation must be positive")
        if np.abs(values).max() > self.truncation * (1 + 1e-6):
            raise GeometryDomainError("TSDF values exceed the truncation band")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def voxel_diagonal(self) -> float:
        return self.voxel_size * math.sqrt(3.0)

    def node_axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self.origin[a] + np.arange(n) * self.voxel_size for a, n in enumerate(self.dims))

    def flipped(self) -> "TsdfGrid":
        return TsdfGrid(-self.values, self.voxel_size, self.origin, self.truncation)

    def save(self, path: Path) -> Path:
        return write_tsdf(path, self.values, self.voxel_size, self.origin, self.truncation)

    @classmethod
    def load(cls, path: Path) -> "TsdfGrid":
        values, voxel, origin, trunc = read_tsdf(path)
        return cls(values.astype(float), voxel, origin, trunc)


# ==========================
# Analytic builders
# ==========================

def box_mesh(w: float, h: float, l: float) -> TriMesh:
    """Closed box centred at the origin, extents along x, y, z."""
    m = trimesh.creation.box(extents=[w, h, l])
    return TriMesh(np.asarray(m.vertices), np.asarray(m.faces))


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    m = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    return TriMesh(np.asarray(m.vertices), np.asarray(m.faces))


def centered_origin(center: np.ndarray, dims: Sequence[int], voxel_size: float) -> np.ndarray:
    return np.asarray(center, dtype=float) - (np.asarray(dims, dtype=float) - 1.0) / 2.0 * voxel_size


def sphere_tsdf(
    radius: float,
    dims: Sequence[int],
    voxel_size: float,
    truncation: Optional[float] = None,
    center: Sequence[float] = (0.0, 0.0, 0.0),
) -> TsdfGrid:
    tau = truncation if truncation is not None else TRUNCATION_VOXELS * voxel_size
    origin = centered_origin(np.asarray(center), dims, voxel_size)
    xs, ys, zs = (origin[a] + np.arange(n) * voxel_size for a, n in enumerate(dims))
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    r = np.sqrt((X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2)
    return TsdfGrid(np.clip(r - radius, -tau, tau), voxel_size, origin, tau)


# ==========================
# Mesh -> TSDF
# ==========================

def _column_hits(tm: trimesh.Trimesh, dims: Tuple[int, int, int], origin: np.ndarray, voxel: float) -> List[np.ndarray]:
    """Sorted x of every surface crossing of the +x ray through each (y, z) node column."""
    _, ny, nz = dims
    jitter = _RAY_JITTER * voxel
    jj, kk = np.meshgrid(np.arange(ny), np.arange(nz), indexing="ij")
    jj, kk = jj.ravel(), kk.ravel()
    start_x = min(origin[0], tm.bounds[0][0]) - 1.0
    ray_origins = np.column_stack([
        np.full(len(jj), start_x),
        origin[1] + jj * voxel + jitter[0],
        origin[2] + kk * voxel + jitter[1],
    ])
    directions = np.tile([1.0, 0.0, 0.0], (len(jj), 1))
    locations, index_ray, _ = tm.ray.intersects_location(ray_origins, directions, multiple_hits=True)

    order = np.lexsort((locations[:, 0], index_ray)) if len(index_ray) else np.zeros(0, dtype=np.int64)
    index_ray, xs = index_ray[order], locations[order, 0]
    bounds = np.searchsorted(index_ray, np.arange(len(jj) + 1))
    return [xs[bounds[r] : bounds[r + 1]] for r in range(len(jj))]


def _inside_by_ray_parity(
    tm: trimesh.Trimesh, dims: Tuple[int, int, int], origin: np.ndarray, voxel: float
) -> np.ndarray:
    nx, ny, nz = dims
    hits = _column_hits(tm, dims, origin, voxel)
    odd = [r for r, h in enumerate(hits) if len(h) % 2 == 1]
    if odd:
        raise SignAmbiguityError([divmod(r, nz) for r in odd])

    node_x = origin[0] + np.arange(nx) * voxel
    inside = np.zeros(dims, dtype=bool)
    for r, h in enumerate(hits):
        if len(h):
            j, k = divmod(r, nz)
            inside[:, j, k] = np.searchsorted(h, node_x, side="left") % 2 == 1
    return inside


def _unsigned_distance(
    tm: trimesh.Trimesh, dims: Tuple[int, int, int], origin: np.ndarray, voxel: float, tau: float
) -> np.ndarray:
    """Distance to the surface inside the +/- tau band, tau elsewhere."""
    band = np.zeros(dims, dtype=bool)
    upper = np.asarray(dims) - 1
    for lo, hi in zip(tm.triangles.min(axis=1) - tau, tm.triangles.max(axis=1) + tau):
        i0 = np.maximum(np.ceil((lo - origin) / voxel).astype(int), 0)
        i1 = np.minimum(np.floor((hi - origin) / voxel).astype(int), upper)
        if np.all(i1 >= i0):
            band[i0[0] : i1[0] + 1, i0[1] : i1[1] + 1, i0[2] : i1[2] + 1] = True

    dist = np.full(dims, tau, dtype=float)
    idx = np.argwhere(band)
    if len(idx):
        _, d, _ = trimesh.proximity.closest_point(tm, origin + idx * voxel)
        dist[band] = np.minimum(d, tau)
    return dist


def mesh_to_tsdf(
    mesh: TriMesh,
    dims: Sequence[int] = DEFAULT_DIMS,
    voxel_size: Optional[float] = None,
    truncation: Optional[float] = None,
    origin: Optional[Sequence[float]] = None,
) -> TsdfGrid:
    """
    Signed distance to a watertight mesh, negative inside, clamped to +/- truncation.

    Sign comes from the crossing parity of rays cast along +x through every
    (y, z) node column with the trimesh ray intersector; a column with an odd
    crossing count means the mesh is not closed and raises SignAmbiguityError.
    Distances inside the truncation band come from trimesh closest-point
    queries.

    voxel_size defaults to the largest spacing that fits the mesh bounds with
    a truncation-wide margin; the grid is centred on the mesh bounds unless
    an origin is given. Truncation defaults to three voxels.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 2:
        raise GeometryDomainError(f"dims must be three values >= 2, got {dims}")
    lo, hi = mesh.bounds
    if voxel_size is None:
        margin = 2.0 * TRUNCATION_VOXELS + 2.0
        if min(dims) <= margin + 1:
            raise GeometryDomainError(f"dims {dims} too small to fit the mesh with a truncation margin")
        voxel_size = float(np.max((hi - lo) / (np.asarray(dims) - 1.0 - margin)))
    if voxel_size <= 0:
        raise GeometryDomainError("voxel_size must be positive")
    tau = truncation if truncation is not None else TRUNCATION_VOXELS * voxel_size
    origin = centered_origin((lo + hi) / 2.0, dims, voxel_size) if origin is None else np.asarray(origin, dtype=float)

    logger.debug("mesh_to_tsdf: %d triangles into %s grid, voxel %.4g m", len(mesh.triangles), dims, voxel_size)
    tm = remove_degenerate_triangles(mesh).to_trimesh()
    if len(tm.faces) == 0:
        raise GeometryDomainError("mesh has no non-degenerate triangles")
    inside = _inside_by_ray_parity(tm, dims, origin, voxel_size)
    dist = _unsigned_distance(tm, dims, origin, voxel_size, tau)
    values = np.clip(np.where(inside, -dist, dist), -tau, tau)
    return TsdfGrid(values, voxel_size, origin, tau)


# ==========================
# TSDF -> mesh
# ==========================

_EDGE_START = np.minimum(CUBE_OFFSETS[EDGE_VERTICES[:, 0]], CUBE_OFFSETS[EDGE_VERTICES[:, 1]])
_EDGE_AXIS = np.argmax(np.abs(CUBE_OFFSETS[EDGE_VERTICES[:, 1]] - CUBE_OFFSETS[EDGE_VERTICES[:, 0]]), axis=1)


def remove_degenerate_triangles(mesh: TriMesh, min_area: float = DEGENERATE_AREA) -> TriMesh:
    """Drops repeated-index and zero-area triangles, then unreferenced vertices."""
    t = mesh.triangles
    keep = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
    if len(t):
        keep &= mesh.triangle_areas > min_area
    t = t[keep]
    used = np.unique(t)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    colors = None if mesh.colors is None else mesh.colors[used]
    return TriMesh(mesh.vertices[used], remap[t], colors)


def marching_cubes(grid: TsdfGrid, level: float = 0.0) -> TriMesh:
    """Zero level set as a triangle mesh in the grid's metric frame; normals face +values."""
    v = grid.values
    nx, ny, nz = grid.dims
    if min(grid.dims) < 2:
        raise EmptySurfaceError("grid too small to hold a surface")

    below = v < level
    cube = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (dx, dy, dz) in enumerate(CUBE_OFFSETS):
        cube |= below[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.int64) << bit
    active = (cube != 0) & (cube != 255)
    if not active.any():
        raise EmptySurfaceError(f"grid never crosses level {level}")

    cells = np.argwhere(active)
    rows = MC_TRIANGLES[cube[active]][:, :15].reshape(-1, 5, 3)
    valid = rows[:, :, 0] >= 0
    tri_cells = np.repeat(np.arange(len(cells)), 5)[valid.ravel()]
    tri_edges = rows[valid]

    n_nodes = nx * ny * nz
    starts = cells[tri_cells][:, None, :] + _EDGE_START[tri_edges]
    flat = np.ravel_multi_index((starts[..., 0], starts[..., 1], starts[..., 2]), (nx, ny, nz))
    edge_ids = _EDGE_AXIS[tri_edges] * n_nodes + flat
    unique_ids, inverse = np.unique(edge_ids.ravel(), return_inverse=True)

    axis = unique_ids // n_nodes
    p0 = np.stack(np.unravel_index(unique_ids % n_nodes, (nx, ny, nz)), axis=1)
    step = np.eye(3, dtype=np.int64)[axis]
    p1 = p0 + step
    v0 = v[p0[:, 0], p0[:, 1], p0[:, 2]]
    v1 = v[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = (level - v0) / (v1 - v0)
    vertices = grid.origin + (p0 + t[:, None] * step) * grid.voxel_size

    triangles = inverse.reshape(-1, 3)[:, [0, 2, 1]]
    mesh = remove_degenerate_triangles(TriMesh(vertices, triangles))
    logger.debug("marching_cubes: %d vertices, %d triangles", len(mesh.vertices), len(mesh.triangles))
    return mesh


# ==========================
# Surface comparison
# ==========================

def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform samples on the mesh surface."""
    areas = mesh.triangle_areas
    if areas.sum() <= 0:
        raise GeometryDomainError("mesh has no area to sample")
    faces = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    a, b, c = (mesh.vertices[mesh.triangles[faces, i]] for i in range(3))
    return (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c


def hausdorff_distance(a_points: np.ndarray, b_points: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    a = np.asarray(a_points, dtype=float)
    b = np.asarray(b_points, dtype=float)
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


# ==========================
# Latent hypersphere
# ==========================

def normalize_latent(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n <= LATENT_EPS:
        raise GeometryDomainError(f"latent norm {n:.3g} too small to normalize")
    return v / n


def geodesic_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two unit vectors, accurate near 0 and pi."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 2.0 * math.atan2(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))


def slerp(a: Sequence[float], b: Sequence[float], t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise GeometryDomainError(f"t must lie in [0, 1], got {t}")
    a = normalize_latent(a)
    b = normalize_latent(b)
    if np.linalg.norm(a + b) <= LATENT_EPS:
        raise GeometryDomainError("antipodal latents have no unique geodesic")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    theta = geodesic_angle(a, b)
    if theta <= LATENT_EPS:
        return a
    out = (math.sin((1.0 - t) * theta) * a + math.sin(t * theta) * b) / math.sin(theta)
    return out / np.linalg.norm(out)


def shape_loss(s: Sequence[float], s_star: Sequence[float]) -> float:
    """
    arccos(2 <s, s*>^2 - 1): the angle between the lines through s and s*,
    doubled. Evaluated as 2 * min(theta, pi - theta) on the geodesic angle
    so s = +/- s* gives exactly 0.
    """
    theta = geodesic_angle(s, s_star)
    return 2.0 * min(theta, math.pi - theta)


# ==========================
# Geometric median
# ==========================

def geometric_objective(points: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(points, dtype=float) - y, axis=1).sum())


def weiszfeld_iterates(points: np.ndarray, eta: float = 1e-12) -> Iterator[np.ndarray]:
    """
    Weiszfeld iterates starting at the mean. When the iterate coincides with
    data points the modified step (Vardi-Zhang) is used; the generator stops
    once the iterate is optimal.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or len(p) == 0:
        raise GeometryDomainError("weiszfeld needs a non-empty (n, d) point array")
    y = p.mean(axis=0)
    yield y
    while True:
        d = np.linalg.norm(p - y, axis=1)
        near = d <= eta
        if near.all():
            return
        w = 1.0 / d[~near]
        far = p[~near]
        T = (w[:, None] * far).sum(axis=0) / w.sum()
        multiplicity = int(near.sum())
        if multiplicity == 0:
            y = T
        else:
            r = float(np.linalg.norm((w[:, None] * (far - y)).sum(axis=0)))
            if r <= multiplicity:
                return
            y = (1.0 - multiplicity / r) * T + (multiplicity / r) * y
        yield y


def weiszfeld_median(
    points: Sequence[Sequence[float]],
    tol: float = 1e-10,
    max_iter: int = 10_000,
    *,
    on_sphere: bool = False,
) -> np.ndarray:
    """
    Geometric median of the rows of ``points``.

    on_sphere re-projects the ambient median to the unit sphere (latent codes).
    Raises NonConvergenceError carrying the last iterate when max_iter steps
    pass without a step shorter than tol.
    """
    y = None
    for n, nxt in enumerate(weiszfeld_iterates(np.asarray(points, dtype=float))):
        if y is not None and np.linalg.norm(nxt - y) < tol:
            y = nxt
            break
        y = nxt
        if n >= max_iter:
            raise NonConvergenceError(
                f"weiszfeld did not converge in {max_iter} iterations", last_iterate=y, iterations=n
            )
    return normalize_latent(y) if on_sphere else y


# ==========================
# Autoencoder loss functional
# ==========================

@dataclass(frozen=True)
class TsdfAeLoss:
    total: float
    reconstruction: float
    latent_norm: float
    total_variation: float


def _grid_values(g) -> np.ndarray:
    return g.values if isinstance(g, TsdfGrid) else np.asarray(g, dtype=float)


def total_variation(values: np.ndarray) -> float:
    """Mean over voxels of the summed forward differences; zero across the far boundary."""
    v = np.asarray(values, dtype=float)
    total = sum(float(np.abs(np.diff(v, axis=a)).sum()) for a in range(v.ndim))
    return total / v.size


def tsdf_ae_loss(reconstruction, latent_prenorm: Sequence[float], target) -> TsdfAeLoss:
    rec = _grid_values(reconstruction)
    tgt = _grid_values(target)
    if rec.shape != tgt.shape:
        raise GeometryDomainError(f"grid dims differ: {rec.shape} vs {tgt.shape}")
    term1 = float(np.abs(rec - tgt).mean())
    term2 = abs(float(np.linalg.norm(np.asarray(latent_prenorm, dtype=float))) - 1.0)
    term3 = total_variation(rec)
    return TsdfAeLoss(term1 + term2 + term3, term1, term2, term3)


# ==========================
# Codebook
# ==========================

@dataclass(frozen=True)
class CodebookEntry:
    id: str
    latent: np.ndarray
    class_tag: str
    grid: TsdfGrid


@dataclass
class Codebook:
    entries: List[CodebookEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> Optional[int]:
        return len(self.entries[0].latent) if self.entries else None

    def add(self, id: str, latent: Sequence[float], class_tag: str, grid: TsdfGrid) -> CodebookEntry:
        if class_tag not in CLASS_TAGS:
            raise GeometryDomainError(f"unknown class tag {class_tag!r}; expected one of {CLASS_TAGS}")
        s = normalize_latent(latent)
        if self.dim is not None and len(s) != self.dim:
            raise GeometryDomainError(f"latent dim {len(s)} does not match codebook dim {self.dim}")
        entry = CodebookEntry(id, s, class_tag, grid)
        self.entries.append(entry)
        return entry

    def latents(self, class_tag: Optional[str] = None) -> np.ndarray:
        rows = [e.latent for e in self.entries if class_tag is None or e.class_tag == class_tag]
        return np.array(rows).reshape(len(rows), self.dim or 0)

    def nearest_index(self, query: Sequence[float]) -> int:
        """Smallest geodesic angle; near-ties (1e-12) go to the lower index."""
        if not self.entries:
            raise GeometryDomainError("codebook is empty")
        s = normalize_latent(query)
        angles = np.array([geodesic_angle(s, e.latent) for e in self.entries])
        return int(np.flatnonzero(angles <= angles.min() + CODEBOOK_TIE_TOL)[0])

    def save(self, directory: Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = CodebookIndex(
            entries=[
                CodebookIndexEntry(id=e.id, latent=e.latent.tolist(), class_tag=e.class_tag, file=f"{e.id}.tsdf")
                for e in self.entries
            ]
        )
        for e in self.entries:
            e.grid.save(directory / f"{e.id}.tsdf")
        path = directory / CODEBOOK_INDEX
        path.write_bytes(orjson.dumps(index.model_dump(), option=orjson.OPT_INDENT_2))
        return path

    @classmethod
    def load(cls, directory: Path) -> "Codebook":
        directory = Path(directory)
        index = CodebookIndex.model_validate(orjson.loads((directory / CODEBOOK_INDEX).read_bytes()))
        book = cls()
        for e in index.entries:
            book.add(e.id, e.latent, e.class_tag, TsdfGrid.load(directory / (e.file or f"{e.id}.tsdf")))
        logger.info("Loaded codebook with %d entries from %s", len(book), directory)
        return book


def latent_to_tsdf(s: Sequence[float], codebook: Codebook) -> TsdfGrid:
    return codebook.entries[codebook.nearest_index(s)].grid


def class_medians(
    codebook: Codebook, tags: Optional[Iterable[str]] = None, **weiszfeld_kwargs
) -> Dict[str, np.ndarray]:
    """Sphere-projected geometric median per class tag plus 'all' over every entry."""
    wanted = list(tags) if tags is not None else sorted({e.class_tag for e in codebook.entries}, key=CLASS_TAGS.index)
    medians: Dict[str, np.ndarray] = {}
    for tag in wanted:
        if tag not in CLASS_TAGS:
            raise GeometryDomainError(f"unknown class tag {tag!r}")
        pts = codebook.latents(tag)
        if len(pts) == 0:
            logger.warning("No codebook entries tagged %s", tag)
            continue
        medians[tag] = weiszfeld_median(pts, on_sphere=True, **weiszfeld_kwargs)
    if len(codebook):
        medians["all"] = weiszfeld_median(codebook.latents(), on_sphere=True, **weiszfeld_kwargs)
    return medians
