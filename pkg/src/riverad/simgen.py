"""Synthetic spatial layouts, covariance kernels and mixed-model response series.

Two kinds of spatial dependence are supported for the random effect:

* ``euclidean``: squared-exponential decay in planar distance.
* ``tailup``: exponential decay in distance along a river network, nonzero
  only between flow-connected points and weighted by Shreve order so the
  marginal variance stays ``sigma2`` everywhere.

The time-varying covariate is always a Euclidean Gaussian field pushed
through a finite moving average over ``p + 1`` iid fields.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .dataio import MultivariateSeries
from .errors import ConfigError, DataError, NumericalError

KINDS = ("euclidean", "tailup")


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class KernelParams:
    sigma2: float = 1.0
    range_alpha: float = 10.0
    nugget_sigma02: float = 0.0

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")
        if not self.range_alpha > 0:
            raise ConfigError(f"range_alpha must be > 0, got {self.range_alpha}")
        if not self.nugget_sigma02 >= 0:
            raise ConfigError(f"nugget_sigma02 must be >= 0, got {self.nugget_sigma02}")


@dataclass(frozen=True)
class Locations:
    coords: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DataError(f"coords must be (n, 2), got {coords.shape}")
        if coords.shape[0] < 2:
            raise DataError("need at least 2 locations")
        if len(self.ids) != coords.shape[0]:
            raise DataError("one id per location required")
        if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
            raise DataError("locations must be pairwise distinct")


@dataclass(frozen=True)
class Placement:
    segment: int
    offset: float


@dataclass
class RiverNetwork:
    """Rooted in-tree of stream segments.

    ``parent[s]`` is the segment immediately downstream of ``s`` (-1 at the
    outlet). Offsets of placements are measured from the segment's upstream
    end, so the point with offset ``length[s]`` sits on the downstream junction.
    """

    parent: np.ndarray
    length: np.ndarray
    outlet: int
    shreve_order: np.ndarray
    placements: list[Placement]
    sensor_ids: tuple[str, ...]
    node_xy: Optional[np.ndarray] = None  # (S, 2, 2): upstream end, downstream end

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=np.int64)
        self.length = np.asarray(self.length, dtype=np.float64)
        self.shreve_order = np.asarray(self.shreve_order, dtype=np.int64)
        n_seg = self.parent.shape[0]
        roots = np.flatnonzero(self.parent < 0)
        if roots.tolist() != [self.outlet]:
            raise DataError(f"network must have exactly one outlet, found {roots.tolist()}")
        if np.any(self.length <= 0):
            raise DataError("segment lengths must be positive")
        self.depth = _depths(self.parent)
        self.down_length = np.zeros(n_seg)
        for s in np.argsort(self.depth, kind="stable"):
            p = self.parent[s]
            if p >= 0:
                self.down_length[s] = self.down_length[p] + self.length[p]
        for pl in self.placements:
            self._check(pl)

    @property
    def n_segments(self) -> int:
        return self.parent.shape[0]

    @property
    def additive_weight(self) -> np.ndarray:
        return self.shreve_order.astype(np.float64)

    def children(self, s: int) -> list[int]:
        return np.flatnonzero(self.parent == s).tolist()

    def _check(self, pl: Placement) -> None:
        if not 0 <= pl.segment < self.n_segments:
            raise DataError(f"unknown segment id {pl.segment}")
        if not 0.0 <= pl.offset <= self.length[pl.segment]:
            raise DataError(f"offset {pl.offset} outside segment {pl.segment} of length {self.length[pl.segment]}")

    def point_xy(self, pl: Placement) -> np.ndarray:
        up, down = self.node_xy[pl.segment]
        frac = pl.offset / self.length[pl.segment]
        return up + frac * (down - up)

    def sensor_coords(self) -> np.ndarray:
        return np.array([self.point_xy(p) for p in self.placements])


def _depths(parent: np.ndarray) -> np.ndarray:
    depth = np.full(parent.shape[0], -1, dtype=np.int64)
    for s in range(parent.shape[0]):
        path = []
        a = s
        while a >= 0 and depth[a] < 0:
            path.append(a)
            if len(path) > parent.shape[0]:
                raise DataError("segment graph contains a cycle")
            a = parent[a]
        base = -1 if a < 0 else depth[a]
        for k, node in enumerate(reversed(path)):
            depth[node] = base + 1 + k
    return depth


def shreve_orders(parent: np.ndarray) -> np.ndarray:
    """Shreve order: 1 on headwater segments, sum of upstream children elsewhere."""
    parent = np.asarray(parent, dtype=np.int64)
    order = np.zeros(parent.shape[0], dtype=np.int64)
    has_child = np.zeros(parent.shape[0], dtype=bool)
    has_child[parent[parent >= 0]] = True
    order[~has_child] = 1
    for s in np.argsort(-_depths(parent), kind="stable"):
        p = parent[s]
        if p >= 0:
            order[p] += order[s]
    return order


# ---------------------------------------------------------------------------
# layouts


def sample_locations(n: int, seed) -> Locations:
    """``n`` points uniform on the unit square."""
    if n < 2:
        raise DataError(f"need n >= 2 locations, got {n}")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    return Locations(coords, tuple(f"s{i + 1}" for i in range(n)))


def build_river_network(n_sensors: int, branch_prob: float = 0.8, depth: int = 5, seed=None) -> RiverNetwork:
    """Random binary in-tree grown upstream from the outlet.

    Every segment above the top level splits into two upstream children with
    probability ``branch_prob``. Lengths are uniform on [0.5, 1.5]; sensors
    pick a segment uniformly and an offset uniformly along it (several
    sensors may share a segment).
    """
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    if not 0.0 <= branch_prob <= 1.0:
        raise ConfigError(f"branch_prob must be in [0, 1], got {branch_prob}")
    if n_sensors < 1:
        raise ConfigError(f"n_sensors must be >= 1, got {n_sensors}")
    rng = np.random.default_rng(seed)
    parent = [-1]
    level = [1]
    frontier = [0]
    while frontier:
        nxt = []
        for s in frontier:
            if level[s] < depth and rng.random() < branch_prob:
                for _ in range(2):
                    parent.append(s)
                    level.append(level[s] + 1)
                    nxt.append(len(parent) - 1)
        frontier = nxt
    parent = np.array(parent, dtype=np.int64)
    n_seg = parent.shape[0]
    length = rng.uniform(0.5, 1.5, size=n_seg)
    segs = rng.integers(0, n_seg, size=n_sensors)
    fracs = rng.uniform(0.0, 1.0, size=n_sensors)
    placements = [Placement(int(s), float(f * length[s])) for s, f in zip(segs, fracs)]
    net = RiverNetwork(
        parent=parent,
        length=length,
        outlet=0,
        shreve_order=shreve_orders(parent),
        placements=placements,
        sensor_ids=tuple(f"s{i + 1}" for i in range(n_sensors)),
    )
    net.node_xy = _layout(net)
    return net


def _layout(net: RiverNetwork) -> np.ndarray:
    """Planar embedding for plotting: outlet at the bottom, headwaters fanned out above."""
    n_seg = net.n_segments
    x = np.zeros(n_seg)
    leaves = [s for s in range(n_seg) if not net.children(s)]
    # depth-first leaf order keeps sibling subtrees side by side
    order = []
    stack = [net.outlet]
    while stack:
        s = stack.pop()
        kids = net.children(s)
        if not kids:
            order.append(s)
        stack.extend(reversed(kids))
    slot = {s: k for k, s in enumerate(order)}
    for s in sorted(range(n_seg), key=lambda s: -net.depth[s]):
        kids = net.children(s)
        x[s] = slot[s] if not kids else np.mean([x[c] for c in kids])
    xy = np.zeros((n_seg, 2, 2))
    for s in range(n_seg):
        bottom = net.down_length[s]
        top = bottom + net.length[s]
        p = net.parent[s]
        x_down = x[p] if p >= 0 else x[s]
        xy[s, 0] = (x[s], top)
        xy[s, 1] = (x_down, bottom)
    span = max(len(leaves) - 1, 1)
    height = max(float(xy[..., 1].max()), 1e-12)
    xy[..., 0] /= span
    xy[..., 1] /= height
    return xy


def placement_arrays(net: RiverNetwork, points: Sequence[Placement]):
    for p in points:
        net._check(p)
    seg = np.array([p.segment for p in points], dtype=np.int64)
    off = np.array([p.offset for p in points], dtype=np.float64)
    return seg, off


def river_pair_matrices(net: RiverNetwork, points: Optional[Sequence[Placement]] = None):
    """All-pairs stream distance and flow connectivity for ``points`` (default: the sensors)."""
    points = net.placements if points is None else points
    seg, off = placement_arrays(net, points)
    return kernels.river_pair_matrices(net.parent, net.length, net.down_length, net.depth, seg, off)


def stream_distance(net: RiverNetwork, a: Placement, b: Placement) -> float:
    """Length of the unique path between two points travelling along segments."""
    dist, _ = river_pair_matrices(net, [a, b])
    return float(dist[0, 1])


def flow_connected(net: RiverNetwork, a: Placement, b: Placement) -> bool:
    """True when one point lies on the other's downstream path to the outlet."""
    _, conn = river_pair_matrices(net, [a, b])
    return bool(conn[0, 1])


# ---------------------------------------------------------------------------
# kernels and covariance


def euclidean_kernel(s, s2, params: KernelParams) -> float:
    d2 = float(np.sum((np.asarray(s, dtype=np.float64) - np.asarray(s2, dtype=np.float64)) ** 2))
    return params.sigma2 * math.exp(-d2 / params.range_alpha)


def tailup_weight(net: RiverNetwork, a: Placement, b: Placement) -> float:
    """sqrt(Omega(upstream segment) / Omega(downstream segment)); 1 on a shared segment."""
    wa = net.additive_weight[a.segment]
    wb = net.additive_weight[b.segment]
    return math.sqrt(min(wa, wb) / max(wa, wb))


def tailup_kernel(net: RiverNetwork, a: Placement, b: Placement, params: KernelParams) -> float:
    dist, conn = river_pair_matrices(net, [a, b])
    if not conn[0, 1]:
        return 0.0
    return tailup_weight(net, a, b) * params.sigma2 * math.exp(-dist[0, 1] / params.range_alpha)


def euclidean_covariance(coords: np.ndarray, params: KernelParams) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    d2 = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1)
    return params.sigma2 * np.exp(-d2 / params.range_alpha)


def tailup_covariance(net: RiverNetwork, params: KernelParams, points: Optional[Sequence[Placement]] = None):
    points = net.placements if points is None else points
    seg, _ = placement_arrays(net, points)
    dist, conn = river_pair_matrices(net, points)
    w = net.additive_weight[seg]
    omega = np.sqrt(np.minimum(w[:, None], w[None, :]) / np.maximum(w[:, None], w[None, :]))
    return np.where(conn, omega * params.sigma2 * np.exp(-dist / params.range_alpha), 0.0)


def covariance_matrix(points: Sequence, kernel: Callable, params: KernelParams) -> np.ndarray:
    """Element-wise kernel evaluation ``K[i, j] = kernel(points[i], points[j], params)``.

    Generic and slow; :func:`euclidean_covariance` and
    :func:`tailup_covariance` are the vectorised forms used in simulation.
    """
    m = len(points)
    if m < 1:
        raise DataError("need at least one point")
    out = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            out[i, j] = out[j, i] = kernel(points[i], points[j], params)
    return out


def cholesky_factor(cov: np.ndarray, sigma2: float) -> np.ndarray:
    """Lower Cholesky factor of ``cov`` with escalating diagonal jitter.

    Jitter starts at 1e-10*sigma2 and grows tenfold up to 1e-6*sigma2.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if sigma2 == 0 and not np.any(cov):
        # a zero-variance field is the constant 0
        return np.zeros_like(cov)
    eye = np.eye(cov.shape[0])
    jitter = 1e-10 * sigma2
    while jitter <= 1e-6 * sigma2 * (1 + 1e-9):
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"covariance not positive definite even with jitter {1e-6 * sigma2:g}")


# ---------------------------------------------------------------------------
# time series


def default_ma_weights(p: int = 3) -> np.ndarray:
    """Weights proportional to 0.5**i, i = 0..p, scaled to unit sum of squares."""
    phi = 0.5 ** np.arange(p + 1)
    return phi / np.sqrt(np.sum(phi**2))


def sample_field_series(cov: np.ndarray, T: int, ma_weights, seed, sigma2: Optional[float] = None) -> np.ndarray:
    """Moving average ``X_t = sum_i phi_i * Xtilde_{t-i}`` of iid N(0, cov) fields.

    ``p`` extra leading fields are drawn and consumed as burn-in, so every
    returned tick is built from a full window. Returns a (T, n) array.
    """
    phi = np.asarray(ma_weights, dtype=np.float64)
    p = phi.shape[0] - 1
    if p < 0 or not np.any(phi != 0):
        raise ConfigError("ma_weights must contain at least one nonzero weight")
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    cov = np.asarray(cov, dtype=np.float64)
    if sigma2 is None:
        sigma2 = float(np.max(np.diag(cov)))
    chol = cholesky_factor(cov, sigma2)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((T + p, cov.shape[0]))
    fields = z @ chol.T
    out = np.zeros((T, cov.shape[0]))
    for i, w in enumerate(phi):
        out += w * fields[p - i : p - i + T]
    return out


@dataclass
class SimConfig:
    n: int = 40
    T: int = 4000
    beta0: float = 5.0
    beta: float = 1.0
    ma_weights: Optional[list[float]] = None
    covariate_kernel: KernelParams = field(default_factory=lambda: KernelParams(1.0, 10.0, 0.0))
    effect_kernel: KernelParams = field(default_factory=lambda: KernelParams(3.0, 10.0, 0.5))
    kind: str = "euclidean"
    branch_prob: float = 0.8
    depth: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.covariate_kernel, dict):
            self.covariate_kernel = KernelParams(**self.covariate_kernel)
        if isinstance(self.effect_kernel, dict):
            self.effect_kernel = KernelParams(**self.effect_kernel)
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        phi = self.phi
        if not np.any(phi != 0):
            raise ConfigError("ma_weights must contain at least one nonzero weight")

    @property
    def phi(self) -> np.ndarray:
        if self.ma_weights is None:
            return default_ma_weights()
        return np.asarray(self.ma_weights, dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ma_weights"] = [float(v) for v in self.phi]
        return d


@dataclass
class Simulation:
    series: MultivariateSeries
    coords: np.ndarray
    covariates: np.ndarray
    random_effect: np.ndarray
    network: Optional[RiverNetwork] = None


_STREAMS = {"locations": 0, "network": 1, "covariates": 2, "effect": 3, "noise": 4}


def _stream(seed, name: str) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        base = seed
    else:
        base = np.random.SeedSequence(seed)
    return np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + (_STREAMS[name],))


def simulate(
    config: SimConfig,
    *,
    network: Optional[RiverNetwork] = None,
    coords: Optional[np.ndarray] = None,
    covariates: Optional[np.ndarray] = None,
) -> Simulation:
    """Draw ``Y_t = beta0 + beta * X_t + Z + eps_t`` for t = 1..T.

    ``Z ~ N(0, Sigma_Z)`` is drawn once; ``eps_t ~ N(0, sigma0^2 I)`` per tick.
    Sigma_Z comes from the Euclidean kernel on ``coords`` or from the tail-up
    kernel on ``network``. Passing ``coords``/``network``/``covariates`` lets
    two simulations share locations and covariate fields.
    """
    n, T = config.n, config.T
    if config.kind == "tailup" and network is None:
        network = build_river_network(n, config.branch_prob, config.depth, _stream(config.seed, "network"))
    if coords is None:
        if network is not None:
            coords = network.sensor_coords()
        else:
            coords = sample_locations(n, _stream(config.seed, "locations")).coords
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (n, 2):
        raise ConfigError(f"coords shape {coords.shape} does not match n={n}")

    if covariates is None:
        cp = config.covariate_kernel
        cov_x = euclidean_covariance(coords, cp)
        covariates = sample_field_series(cov_x, T, config.phi, _stream(config.seed, "covariates"), cp.sigma2)
    covariates = np.asarray(covariates, dtype=np.float64)
    if covariates.shape != (T, n):
        raise ConfigError(f"covariates shape {covariates.shape} does not match (T, n)=({T}, {n})")

    ep = config.effect_kernel
    if config.kind == "euclidean":
        cov_z = euclidean_covariance(coords, ep)
    else:
        if len(network.placements) != n:
            raise ConfigError(f"network has {len(network.placements)} sensors, config n={n}")
        cov_z = tailup_covariance(network, ep)
    chol_z = cholesky_factor(cov_z, ep.sigma2)
    z = chol_z @ np.random.default_rng(_stream(config.seed, "effect")).standard_normal(n)
    noise = np.random.default_rng(_stream(config.seed, "noise")).standard_normal((T, n))
    y = config.beta0 + config.beta * covariates + z[None, :] + math.sqrt(ep.nugget_sigma02) * noise

    ids = network.sensor_ids if network is not None else tuple(f"s{i + 1}" for i in range(n))
    series = MultivariateSeries(y, np.arange(1, T + 1), ids)
    return Simulation(series, coords, covariates, z, network)


def simulate_response(config: SimConfig) -> MultivariateSeries:
    return simulate(config).series


# ---------------------------------------------------------------------------
# network files


def write_network(net: RiverNetwork, edges_path, placements_path) -> None:
    with Path(edges_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "parent_id", "length"])
        for s in range(net.n_segments):
            w.writerow([s, int(net.parent[s]), repr(float(net.length[s]))])
    with Path(placements_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor_id", "segment_id", "offset"])
        for sid, pl in zip(net.sensor_ids, net.placements):
            w.writerow([sid, pl.segment, repr(float(pl.offset))])


def read_network(edges_path, placements_path) -> RiverNetwork:
    with Path(edges_path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = [int(r["segment_id"]) for r in rows]
    if sorted(ids) != list(range(len(ids))):
        raise DataError("segment ids must be 0..S-1")
    parent = np.empty(len(ids), dtype=np.int64)
    length = np.empty(len(ids))
    for r in rows:
        s = int(r["segment_id"])
        parent[s] = int(r["parent_id"])
        length[s] = float(r["length"])
    if np.any((parent >= len(ids)) | (parent < -1)):
        raise DataError("parent id refers to an unknown segment")
    with Path(placements_path).open(newline="", encoding="utf-8") as fh:
        prow = list(csv.DictReader(fh))
    placements = [Placement(int(r["segment_id"]), float(r["offset"])) for r in prow]
    outlet = int(np.flatnonzero(parent < 0)[0]) if np.any(parent < 0) else -1
    net = RiverNetwork(
        parent=parent,
        length=length,
        outlet=outlet,
        shreve_order=shreve_orders(parent),
        placements=placements,
        sensor_ids=tuple(r["sensor_id"] for r in prow),
    )
    net.node_xy = _layout(net)
    return net
