"""Coil geometries, Biot-Savart fields and flux couplings.

Every coil is built in a local frame whose axis (or sensing direction for the
planar windings) is local +z, then placed with a rigid :class:`Pose`.  Windings
are polygonal current paths; fields use the exact finite-segment Biot-Savart
kernel, and fluxes are tensor-product Gauss-Legendre integrals over each
turn's spanning surface.  Node sets are mirror symmetric about the coil's own
symmetry planes, so an antisymmetric field integrates to zero up to rounding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidSpecError, OutOfDomainError, OverlapError, SingularityError

MU0 = 4e-7 * math.pi
SINGULAR_DISTANCE = 1e-6
CONNECT_TOL = 1e-9

FieldFunction = Callable[[np.ndarray], np.ndarray]

# Local +z is sent to the named global axis; every matrix is an exact proper rotation.
_AXIS_FRAMES = {
    "+z": ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    "-z": ((1, 0, 0), (0, -1, 0), (0, 0, -1)),
    "+x": ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    "-x": ((0, 0, -1), (1, 0, 0), (0, -1, 0)),
    "+y": ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    "-y": ((0, -1, 0), (0, 0, -1), (1, 0, 0)),
}


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform applied as ``p_global = rotation @ p_local + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        tr = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise InvalidSpecError("pose rotation must be a proper orthogonal matrix")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def along(cls, axis: str = "+z", translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Pose whose local +z axis points along ``axis`` ('+x', '-y', ...)."""
        try:
            rot = np.array(_AXIS_FRAMES[axis], dtype=float)
        except KeyError:
            raise InvalidSpecError(f"unknown axis {axis!r}") from None
        return cls(rot, np.asarray(translation, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self.rotation.T

    def same_as(self, other: "Pose", tol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=tol)
            and np.allclose(self.translation, other.translation, atol=tol)
        )


# kind -> (required parameters, defaults)
_COIL_PARAMS: dict[str, tuple[tuple[str, ...], dict]] = {
    "solenoid": (("radius", "length", "turns"), {}),
    "saddle": (("radius", "length", "arc_deg"), {"turns": 1}),
    "detection_loop": (("size",), {"shape": "circle", "turns": 1}),
    "cancellation_pair": (
        ("half_u", "half_v", "gap", "turns"),
        {"inner_fraction": 0.3, "density_ratio": 3.0},
    ),
}
COIL_KINDS = tuple(_COIL_PARAMS)


@dataclass(frozen=True, eq=False)
class CoilSpec:
    """Kind-specific coil description plus its placement.

    Parameters per kind (lengths in meters):

    * ``solenoid``: radius, length, turns
    * ``saddle``: radius, length, arc_deg, turns -- two windows on a cylinder
      about local z, centered on local +x and -x; senses flux along local x
    * ``detection_loop``: size (radius, or side for ``shape='square'``), turns
    * ``cancellation_pair``: half_u, half_v (outer half extents along local x
      and y), gap (planes sit at local z = +-gap), turns per side,
      inner_fraction (innermost turn scale), density_ratio (outer:inner
      turn density, > 1 means denser outside)
    """

    kind: str
    params: Mapping[str, float]
    pose: Pose = field(default_factory=Pose)
    name: str = ""

    def __post_init__(self):
        if self.kind not in _COIL_PARAMS:
            raise InvalidSpecError(f"unknown coil kind {self.kind!r}")
        required, defaults = _COIL_PARAMS[self.kind]
        params = dict(defaults)
        params.update(self.params)
        missing = [k for k in required if k not in params]
        if missing:
            raise InvalidSpecError(f"{self.kind} coil missing parameters {missing}")
        extra = set(params) - set(required) - set(defaults)
        if extra:
            raise InvalidSpecError(f"{self.kind} coil got unknown parameters {sorted(extra)}")
        for key, value in params.items():
            if key == "shape":
                if value not in ("circle", "square"):
                    raise InvalidSpecError("detection loop shape must be 'circle' or 'square'")
                continue
            if not np.isfinite(value) or value <= 0:
                raise InvalidSpecError(f"{self.kind} parameter {key} must be positive, got {value}")
        turns = params["turns"]
        if int(turns) != turns or turns < 1:
            raise InvalidSpecError("turn count must be an integer >= 1")
        params["turns"] = int(turns)
        if self.kind == "saddle" and not 0 < params["arc_deg"] <= 180:
            raise InvalidSpecError("saddle arc angle must lie in (0, 180] degrees")
        if self.kind == "cancellation_pair":
            if not params["inner_fraction"] < 1:
                raise InvalidSpecError("inner_fraction must be < 1")
        if not isinstance(self.pose, Pose):
            raise InvalidSpecError("pose must be a Pose")
        object.__setattr__(self, "params", params)

    @property
    def turns(self) -> int:
        return self.params["turns"]

    @property
    def size_scale(self) -> float:
        """Characteristic radius used for far-field distance statements."""
        p = self.params
        if self.kind in ("solenoid", "saddle"):
            return p["radius"]
        if self.kind == "detection_loop":
            return p["size"] if p["shape"] == "circle" else p["size"] / math.sqrt(2)
        return math.hypot(p["half_u"], p["half_v"])

    def same_placement(self, other: "CoilSpec") -> bool:
        return self.kind == other.kind and self.params == other.params and self.pose.same_as(other.pose)


@dataclass(frozen=True, eq=False)
class WindingPath:
    """Piecewise-linear current path made of one or more closed loops.

    ``loop_starts`` holds the index of the first segment of every loop; within
    a loop each segment ends where the next begins.  ``current`` is the phasor
    amplitude (amperes) shared by all segments.
    """

    starts: np.ndarray
    ends: np.ndarray
    current: complex = 1.0
    loop_starts: tuple = (0,)
    closed: bool = True

    def __post_init__(self):
        starts = np.ascontiguousarray(self.starts, dtype=float).reshape(-1, 3)
        ends = np.ascontiguousarray(self.ends, dtype=float).reshape(-1, 3)
        if starts.shape != ends.shape or len(starts) == 0:
            raise InvalidSpecError("winding needs matching, non-empty start/end arrays")
        if np.any(np.linalg.norm(ends - starts, axis=1) <= CONNECT_TOL):
            raise InvalidSpecError("winding contains a zero-length segment")
        bounds = list(self.loop_starts) + [len(starts)]
        if bounds[0] != 0 or any(b >= e for b, e in zip(bounds[:-1], bounds[1:])):
            raise InvalidSpecError("loop_starts must be increasing and begin at 0")
        for b, e in zip(bounds[:-1], bounds[1:]):
            gaps = np.linalg.norm(starts[b + 1:e] - ends[b:e - 1], axis=1)
            if np.any(gaps > CONNECT_TOL):
                raise InvalidSpecError("consecutive segments are not connected")
            if self.closed and np.linalg.norm(starts[b] - ends[e - 1]) > CONNECT_TOL:
                raise InvalidSpecError("closed winding does not return to its start")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "ends", ends)
        object.__setattr__(self, "loop_starts", tuple(int(b) for b in self.loop_starts))

    def __len__(self):
        return len(self.starts)

    @property
    def n_loops(self) -> int:
        return len(self.loop_starts)

    def with_current(self, current: complex) -> "WindingPath":
        return WindingPath(self.starts, self.ends, current, self.loop_starts, self.closed)

    def to_csv(self, path) -> None:
        loop_id = np.zeros(len(self), dtype=int)
        for i, b in enumerate(self.loop_starts):
            loop_id[b:] = i
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x0", "y0", "z0", "x1", "y1", "z1", "loop"])
            for s, e, lid in zip(self.starts, self.ends, loop_id):
                writer.writerow([*(f"{v:.9g}" for v in s), *(f"{v:.9g}" for v in e), lid])


def combine_paths(paths: Sequence[WindingPath]) -> WindingPath:
    """Merge windings that carry the same current into a single path."""
    current = paths[0].current
    if any(p.current != current for p in paths):
        raise InvalidSpecError("combined paths must carry identical current")
    starts, ends, loops, offset = [], [], [], 0
    for p in paths:
        starts.append(p.starts)
        ends.append(p.ends)
        loops.extend(b + offset for b in p.loop_starts)
        offset += len(p)
    return WindingPath(np.vstack(starts), np.vstack(ends), current, tuple(loops), all(p.closed for p in paths))


def turn_scales(turns: int, inner_fraction: float, density_ratio: float) -> np.ndarray:
    """Relative turn sizes in [inner_fraction, 1] for a linear turn-density law.

    Turn density grows linearly from 1 at the innermost turn to
    ``density_ratio`` at the outermost, so spacing shrinks toward the edge
    when ``density_ratio > 1``.
    """
    if turns == 1:
        return np.array([1.0])
    f = inner_fraction
    a = (density_ratio - 1.0) / (2.0 * (1.0 - f))
    total = (1.0 - f) * (1.0 + density_ratio) / 2.0
    target = np.arange(turns) / (turns - 1) * total
    if abs(a) < 1e-15:
        u = target
    else:
        u = (-1.0 + np.sqrt(1.0 + 4.0 * a * target)) / (2.0 * a)
    scales = f + u
    scales[-1] = 1.0
    return scales


def _polygon_loop(radius, n, z=0.0):
    # vertex radius chosen so the polygon encloses exactly pi * radius**2
    r_eff = radius * math.sqrt(2 * math.pi / (n * math.sin(2 * math.pi / n)))
    theta = 2 * math.pi * np.arange(n + 1) / n
    pts = np.column_stack([r_eff * np.cos(theta), r_eff * np.sin(theta), np.full(n + 1, z)])
    pts[-1] = pts[0]
    return pts


def _rectangle_loop(hu, hv, per_side, z=0.0):
    corners = np.array([[-hu, -hv], [hu, -hv], [hu, hv], [-hu, hv], [-hu, -hv]])
    pts = []
    for a, b in zip(corners[:-1], corners[1:]):
        t = np.arange(per_side)[:, None] / per_side
        pts.append(a + t * (b - a))
    pts.append(corners[-1:])
    pts = np.vstack(pts)
    return np.column_stack([pts, np.full(len(pts), z)])


def _saddle_window(radius, length, arc, phi_c, sign, n_arc):
    phi1, phi2 = phi_c - arc / 2, phi_c + arc / 2
    z1, z2 = -length / 2, length / 2
    phis = np.linspace(phi1, phi2, n_arc + 1)

    def arc_pts(ph, z):
        return np.column_stack([radius * np.cos(ph), radius * np.sin(ph), np.full(len(ph), z)])

    # counter-clockwise in (phi, z) gives the outward radial normal
    pts = np.vstack([arc_pts(phis, z1), arc_pts(phis[::-1], z2), arc_pts(phis[:1], z1)])
    if sign < 0:
        pts = pts[::-1]
    return pts


def _loops_local(spec: CoilSpec, n: int) -> list[np.ndarray]:
    p = spec.params
    loops = []
    if spec.kind == "solenoid":
        L, N = p["length"], p["turns"]
        for k in range(N):
            loops.append(_polygon_loop(p["radius"], n, -L / 2 + (k + 0.5) * L / N))
    elif spec.kind == "detection_loop":
        for _ in range(p["turns"]):
            if p["shape"] == "circle":
                loops.append(_polygon_loop(p["size"], n))
            else:
                h = p["size"] / 2
                loops.append(_rectangle_loop(h, h, max(1, n // 4)))
    elif spec.kind == "saddle":
        arc = math.radians(p["arc_deg"])
        n_arc = max(2, int(round(n * p["arc_deg"] / 360.0)))
        for _ in range(p["turns"]):
            loops.append(_saddle_window(p["radius"], p["length"], arc, 0.0, +1, n_arc))
            loops.append(_saddle_window(p["radius"], p["length"], arc, math.pi, -1, n_arc))
    elif spec.kind == "cancellation_pair":
        scales = turn_scales(p["turns"], p["inner_fraction"], p["density_ratio"])
        for z in (p["gap"], -p["gap"]):
            for s in scales:
                loops.append(_rectangle_loop(s * p["half_u"], s * p["half_v"], max(1, n // 4), z))
    return loops


def realize_coil(spec: CoilSpec, segments_per_turn: int = 64, current: complex = 1.0) -> WindingPath:
    """Discretize a coil into a closed polygonal winding in global coordinates."""
    if segments_per_turn < 8:
        raise InvalidSpecError("segments_per_turn must be >= 8")
    starts, ends, loop_starts = [], [], []
    offset = 0
    for pts in _loops_local(spec, segments_per_turn):
        g = spec.pose.apply(pts)
        starts.append(g[:-1])
        ends.append(g[1:])
        loop_starts.append(offset)
        offset += len(pts) - 1
    return WindingPath(np.vstack(starts), np.vstack(ends), current, tuple(loop_starts), True)


def field_at(path: WindingPath, points) -> np.ndarray:
    """Magnetic field H (A/m) of ``path`` at ``points`` (shape ``(..., 3)``).

    Raises :class:`SingularityError` when a point lies within 1 um of a
    segment instead of regularizing the kernel.
    """
    pts = np.asarray(points, dtype=float)
    shape = pts.shape
    if shape[-1] != 3:
        raise ValueError("points must have a trailing dimension of 3")
    pts = pts.reshape(-1, 3)
    a, b = path.starts, path.ends
    seg_len = np.linalg.norm(b - a, axis=1)
    out = np.zeros((len(pts), 3))
    chunk = max(1, 400_000 // len(a))
    for i in range(0, len(pts), chunk):
        p = pts[i:i + chunk]
        r1 = [a[None, :, k] - p[:, k, None] for k in range(3)]
        r2 = [b[None, :, k] - p[:, k, None] for k in range(3)]
        cx = r1[1] * r2[2] - r1[2] * r2[1]
        cy = r1[2] * r2[0] - r1[0] * r2[2]
        cz = r1[0] * r2[1] - r1[1] * r2[0]
        n1 = np.sqrt(r1[0] ** 2 + r1[1] ** 2 + r1[2] ** 2)
        n2 = np.sqrt(r2[0] ** 2 + r2[1] ** 2 + r2[2] ** 2)
        dot = r1[0] * r2[0] + r1[1] * r2[1] + r1[2] * r2[2]
        # distance to the supporting line is |r1 x r2| / |b - a|; a point is on the
        # segment itself when it also projects between the end points (dot <= 0)
        line = np.sqrt(cx ** 2 + cy ** 2 + cz ** 2) / seg_len
        near = (np.minimum(n1, n2) < SINGULAR_DISTANCE) | ((line < SINGULAR_DISTANCE) & (dot <= 0))
        if np.any(near):
            j = int(np.argmax(near.any(axis=1)))
            raise SingularityError(f"field point {p[j].tolist()} lies on a winding segment")
        factor = (n1 + n2) / (n1 * n2 * (n1 * n2 + dot))
        out[i:i + chunk, 0] = (cx * factor).sum(axis=1)
        out[i:i + chunk, 1] = (cy * factor).sum(axis=1)
        out[i:i + chunk, 2] = (cz * factor).sum(axis=1)
    return (out * (path.current / (4 * math.pi))).astype(complex).reshape(shape)


def path_field(path: WindingPath) -> FieldFunction:
    """Wrap :func:`field_at` as a field function of points."""
    return lambda points: field_at(path, points)


def superpose(*fields: FieldFunction) -> FieldFunction:
    return lambda points: sum(f(points) for f in fields)


@dataclass(frozen=True)
class FluxResult:
    """Flux (Wb) through a coil's sensing surface, total and per turn."""

    flux: complex
    per_turn: tuple


def _gauss(n, lo, hi):
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = (hi + lo) / 2, (hi - lo) / 2
    # exact mirror pairs: leggauss nodes are symmetric about 0 to rounding
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return mid + half * x, half * w


def _disk_nodes(radius, order, z=0.0):
    r, wr = _gauss(order, 0.0, radius)
    m = 4 * order
    theta = (np.arange(m) + 0.5) * 2 * math.pi / m
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    w = np.outer(wr * r, np.full(m, 2 * math.pi / m))
    pts = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel(), np.full(rr.size, z)])
    normals = np.zeros_like(pts)
    normals[:, 2] = w.ravel()
    return pts, normals


def _rect_nodes(hu, hv, order, z=0.0):
    u, wu = _gauss(order, -hu, hu)
    v, wv = _gauss(order, -hv, hv)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([uu.ravel(), vv.ravel(), np.full(uu.size, z)])
    normals = np.zeros_like(pts)
    normals[:, 2] = np.outer(wu, wv).ravel()
    return pts, normals


def _saddle_nodes(radius, length, arc, order):
    pts_all, nrm_all = [], []
    for phi_c, sign in ((0.0, 1.0), (math.pi, -1.0)):
        phi, wphi = _gauss(order, phi_c - arc / 2, phi_c + arc / 2)
        z, wz = _gauss(order, -length / 2, length / 2)
        pp, zz = np.meshgrid(phi, z, indexing="ij")
        w = np.outer(wphi, wz).ravel() * radius
        c, s = np.cos(pp.ravel()), np.sin(pp.ravel())
        pts_all.append(np.column_stack([radius * c, radius * s, zz.ravel()]))
        nrm_all.append(sign * w[:, None] * np.column_stack([c, s, np.zeros_like(c)]))
    return np.vstack(pts_all), np.vstack(nrm_all)


def sensing_surfaces(spec: CoilSpec, quadrature_order: int = 12) -> list[tuple[np.ndarray, np.ndarray]]:
    """Quadrature nodes and weighted normals (m^2) of every turn, globally placed.

    Orientation follows the right-hand rule with the winding direction used
    by :func:`realize_coil`, which keeps mutual couplings reciprocal.
    """
    if quadrature_order < 2:
        raise InvalidSpecError("quadrature_order must be >= 2")
    p = spec.params
    q = quadrature_order
    local = []
    if spec.kind == "solenoid":
        L, N = p["length"], p["turns"]
        for k in range(N):
            local.append(_disk_nodes(p["radius"], q, -L / 2 + (k + 0.5) * L / N))
    elif spec.kind == "detection_loop":
        if p["shape"] == "circle":
            nodes = _disk_nodes(p["size"], q)
        else:
            nodes = _rect_nodes(p["size"] / 2, p["size"] / 2, q)
        local.extend([nodes] * p["turns"])
    elif spec.kind == "saddle":
        nodes = _saddle_nodes(p["radius"], p["length"], math.radians(p["arc_deg"]), q)
        local.extend([nodes] * p["turns"])
    elif spec.kind == "cancellation_pair":
        scales = turn_scales(p["turns"], p["inner_fraction"], p["density_ratio"])
        for s in scales:
            a = _rect_nodes(s * p["half_u"], s * p["half_v"], q, p["gap"])
            b = _rect_nodes(s * p["half_u"], s * p["half_v"], q, -p["gap"])
            local.append((np.vstack([a[0], b[0]]), np.vstack([a[1], b[1]])))
    return [(spec.pose.apply(pts), spec.pose.rotate(nrm)) for pts, nrm in local]


def as_field_function(field) -> FieldFunction:
    """Accept either a callable or an object with an ``interpolate`` method."""
    if hasattr(field, "interpolate"):
        return field.interpolate
    if callable(field):
        return field
    raise TypeError("field must be a VectorFieldGrid or a callable of points")


def flux_through(field, coil: CoilSpec, quadrature_order: int = 12) -> FluxResult:
    """Flux mu0 * integral(H . dA) through every turn of ``coil``.

    ``field`` is a callable ``points -> H`` or a gridded field with an
    ``interpolate`` method (trilinear); grid sampling outside the lattice
    raises :class:`OutOfDomainError`.
    """
    fn = as_field_function(field)
    surfaces = sensing_surfaces(coil, quadrature_order)
    # evaluate all turns in one call, then split
    pts = np.vstack([s[0] for s in surfaces])
    # turns that share a surface (saddle, detection loop) repeat their nodes
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    h = np.asarray(fn(uniq) if len(uniq) < len(pts) else fn(pts), dtype=complex)
    if len(uniq) < len(pts):
        h = h[inverse.reshape(-1)]
    per_turn = []
    start = 0
    for pts_t, nrm_t in surfaces:
        n = len(pts_t)
        per_turn.append(complex(MU0 * np.sum(h[start:start + n] * nrm_t)))
        start += n
    total = complex(MU0 * np.sum(h * np.vstack([s[1] for s in surfaces])))
    return FluxResult(total, tuple(per_turn))


def mutual_coupling_matrix(
    coils: Sequence[CoilSpec], segments_per_turn: int = 128, quadrature_order: int = 12
) -> np.ndarray:
    """Flux through coil i per ampere in coil j (Wb/A).

    The diagonal (self inductance of a filament) is divergent and left as NaN.
    """
    if len(coils) < 2:
        raise InvalidSpecError("mutual coupling needs at least two coils")
    for i in range(len(coils)):
        for j in range(i + 1, len(coils)):
            if coils[i].same_placement(coils[j]):
                raise OverlapError(f"coils {i} and {j} are identical windings at the same pose")
    paths = [realize_coil(c, segments_per_turn) for c in coils]
    n = len(coils)
    m = np.full((n, n), np.nan + 0j)
    for j, path in enumerate(paths):
        fn = path_field(path)
        for i, coil in enumerate(coils):
            if i != j:
                m[i, j] = flux_through(fn, coil, quadrature_order).flux
    return m


def check_inside(points: np.ndarray, lower, upper, what: str = "point") -> None:
    lo = np.asarray(lower) - 1e-12
    hi = np.asarray(upper) + 1e-12
    bad = np.any((points < lo) | (points > hi), axis=-1)
    if np.any(bad):
        raise OutOfDomainError(f"{what} {points[np.argmax(bad)].tolist()} lies outside the domain")
