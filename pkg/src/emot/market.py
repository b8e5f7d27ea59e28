"""Synthetic market data: Heston paths, histogram reference, noised marginals.

The pipeline mirrors a one-period calibration experiment: simulate
(S_t1, S_t2, v_t1) under a driftless Heston model, bin the joint sample on a
uniform grid to obtain the reference measure, perturb each coordinate with
Gaussian noise to play the role of "market" marginals, and assemble the
resulting transport problem.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import (
    DegenerateHistogram,
    FellerViolation,
    MassOutsideGridWarning,
    NonConvexPrices,
)
from .measures import (
    CostTensor,
    DiscreteMeasure,
    ProblemInstance,
    match_mean,
    validate_instance,
)

RNG_IDENTITY = "numpy.random.PCG64 via SeedSequence(seed, spawn_key)"
PATH_STREAM = 0
NOISE_STREAM = 1
DEFAULT_BLOCK = 1 << 17
OUTSIDE_FRACTION = 1e-3
DEFAULT_C_CAP = 30.0


@dataclass(frozen=True)
class HestonParams:
    s0: float = 5000.0
    v0: float = 0.15
    v_bar: float = 0.15
    lam: float = 1.0
    eta: float = 0.05
    t1: float = 0.1
    t2: float = 0.2
    dt: float = 0.01
    n_paths: int = 10**6
    seed: int = 0
    corr: float = 0.0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if not 0 < self.dt <= self.t1 < self.t2:
            raise ValueError("need 0 < dt <= t1 < t2")
        if self.s0 <= 0 or self.v0 < 0 or self.v_bar <= 0 or self.lam <= 0:
            raise ValueError("s0, v_bar, lam must be positive and v0 >= 0")
        if not -1.0 <= self.corr <= 1.0:
            raise ValueError("corr must lie in [-1, 1]")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.eta > 0 and not self.feller_ratio > 1.0:
            raise FellerViolation(
                f"2*lam*v_bar/eta^2 = {self.feller_ratio:.4g} <= 1"
            )

    @property
    def feller_ratio(self) -> float:
        if self.eta == 0:
            return math.inf
        return 2.0 * self.lam * self.v_bar / self.eta**2


@dataclass(frozen=True)
class AxisGrid:
    lower: float
    upper: float
    count: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("grid needs lower < upper")
        if self.count < 2:
            raise ValueError("grid needs at least two cells")

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.count

    @property
    def centers(self) -> np.ndarray:
        return self.lower + (np.arange(self.count) + 0.5) * self.width

    def cell_index(self, values: np.ndarray):
        """Cell of each value with out-of-range values clipped to the ends.

        Returns ``(index, n_outside)``.
        """
        pos = np.floor((values - self.lower) / self.width)
        outside = int(np.count_nonzero((values < self.lower) | (values > self.upper)))
        return np.clip(pos, 0, self.count - 1).astype(np.intp), outside


@dataclass(frozen=True)
class GridSpec:
    x: AxisGrid = field(default_factory=lambda: AxisGrid(3400.0, 6400.0, 40))
    y: AxisGrid = field(default_factory=lambda: AxisGrid(3200.0, 6700.0, 50))
    z: AxisGrid = field(default_factory=lambda: AxisGrid(0.135, 0.165, 5))

    @property
    def shape(self):
        return (self.x.count, self.y.count, self.z.count)

    def axes(self):
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class NoiseSpec:
    sigma1: float = 100.0
    sigma2: float = 150.0
    sigma3: float = 0.01


@dataclass(frozen=True)
class PathSample:
    s1: np.ndarray
    s2: np.ndarray
    v1: np.ndarray
    params: HestonParams | None = None
    rng: str = RNG_IDENTITY

    def __len__(self):
        return self.s1.size

    def metadata(self) -> dict:
        return {
            "n_paths": len(self),
            "rng": self.rng,
            "params": asdict(self.params) if self.params else None,
        }


def _substeps(t0, t1, dt):
    n = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    return n, (t1 - t0) / n


def _simulate_block(params: HestonParams, seed_seq, n):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    s = np.full(n, float(params.s0))
    v = np.full(n, float(params.v0))
    perp = math.sqrt(1.0 - params.corr**2)
    out = {}
    for label, (a, b) in (("t1", (0.0, params.t1)), ("t2", (params.t1, params.t2))):
        steps, h = _substeps(a, b, params.dt)
        for _ in range(steps):
            zv = rng.standard_normal(n)
            zs = params.corr * zv + perp * rng.standard_normal(n) if params.corr else \
                rng.standard_normal(n)
            vp = np.maximum(v, 0.0)
            root = np.sqrt(vp * h)
            # log-Euler in S keeps the price positive and conditionally driftless
            s = s * np.exp(-0.5 * vp * h + root * zs)
            v = v - params.lam * (vp - params.v_bar) * h + params.eta * root * zv
        if label == "t1":
            out["s1"], out["v1"] = s.copy(), np.maximum(v, 0.0)
    out["s2"] = s
    return out


def simulate_heston(params: HestonParams, threads: int = 1,
                    block_size: int = DEFAULT_BLOCK) -> PathSample:
    """Euler full-truncation paths of the driftless Heston model.

    Paths are generated in fixed-size blocks, each with its own child seed,
    so the output depends only on ``params`` and ``block_size``, never on
    ``threads``.
    """
    n = params.n_paths
    sizes = [block_size] * (n // block_size)
    if n % block_size:
        sizes.append(n % block_size)
    root = np.random.SeedSequence(params.seed, spawn_key=(PATH_STREAM,))
    children = root.spawn(len(sizes))
    jobs = list(zip(children, sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: _simulate_block(params, *j), jobs))
    else:
        parts = [_simulate_block(params, *j) for j in jobs]
    cat = {k: np.concatenate([p[k] for p in parts]) for k in ("s1", "s2", "v1")}
    return PathSample(cat["s1"], cat["s2"], cat["v1"], params=params)


def _bin_axes(values, grids: GridSpec):
    idx, outside = [], []
    for vals, axis in zip(values, grids.axes()):
        i, o = axis.cell_index(np.asarray(vals, dtype=float))
        idx.append(i)
        outside.append(o)
    return idx, outside


def histogram3d(sample: PathSample, grids: GridSpec) -> np.ndarray:
    """Integer cell counts of (S_t1, S_t2, v_t1), out-of-range clipped to edges."""
    (i, j, k), _ = _bin_axes((sample.s1, sample.s2, sample.v1), grids)
    flat = np.ravel_multi_index((i, j, k), grids.shape)
    return np.bincount(flat, minlength=int(np.prod(grids.shape))).reshape(grids.shape)


def build_reference(sample: PathSample, grids: GridSpec | None = None,
                    c_cap: float = DEFAULT_C_CAP):
    """Histogram the joint sample into a cost tensor and its base marginals.

    ``c = -log(q / (q_x q_y q_z))`` on populated cells and ``c_cap`` on empty
    cells, so ``exp(-c) q_x q_y q_z`` reproduces the joint histogram ``q``
    wherever it is positive. Returns ``(cost, (mu_q, nu_q, rho_q))``.
    """
    grids = grids or GridSpec()
    if len(sample) == 0:
        raise ValueError("empty sample")
    counts = histogram3d(sample, grids)
    total = counts.sum()
    q = counts / total
    margs = [counts.sum(axis=ax) / total for ax in ((1, 2), (0, 2), (0, 1))]
    for name, m in zip("xyz", margs):
        if np.count_nonzero(m) < 2:
            raise DegenerateHistogram(f"axis {name} has fewer than two populated cells")
    qx, qy, qz = margs
    pos = counts > 0
    cost = np.full(grids.shape, float(c_cap))
    with np.errstate(divide="ignore"):
        logprod = (np.log(qx)[:, None, None] + np.log(qy)[None, :, None]
                   + np.log(qz)[None, None, :])
    cost[pos] = logprod[pos] - np.log(q[pos])
    measures = tuple(DiscreteMeasure(ax.centers, m)
                     for ax, m in zip(grids.axes(), margs))
    return CostTensor(cost), measures


def noised_marginals(sample: PathSample, noise: NoiseSpec | None = None,
                     grids: GridSpec | None = None, seed: int | None = None,
                     t1: float | None = None, t2: float | None = None):
    """Histogram each coordinate after adding independent Gaussian noise.

    Noise scales are sigma1*sqrt(t1), sigma2*sqrt(t2), sigma3*sqrt(t1).
    Times and seed default to the sample's Heston parameters. Warns with
    MassOutsideGridWarning when more than 0.1% of an axis falls off-grid.
    """
    noise = noise or NoiseSpec()
    grids = grids or GridSpec()
    p = sample.params
    t1 = t1 if t1 is not None else p.t1
    t2 = t2 if t2 is not None else p.t2
    seed = seed if seed is not None else (p.seed if p else 0)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(NOISE_STREAM,)))
    )
    n = len(sample)
    scales = (noise.sigma1 * math.sqrt(t1), noise.sigma2 * math.sqrt(t2),
              noise.sigma3 * math.sqrt(t1))
    noised = []
    for vals, sc in zip((sample.s1, sample.s2, sample.v1), scales):
        eps = rng.standard_normal(n)
        noised.append(vals + sc * eps if sc else vals)
    idx, outside = _bin_axes(noised, grids)
    out = []
    for name, i, o, axis in zip("xyz", idx, outside, grids.axes()):
        if o > OUTSIDE_FRACTION * n:
            warnings.warn(
                f"{o / n:.2%} of axis {name} lies outside "
                f"[{axis.lower}, {axis.upper}]; clipped to boundary cells",
                MassOutsideGridWarning,
                stacklevel=2,
            )
        out.append(DiscreteMeasure.from_counts(axis.centers,
                                               np.bincount(i, minlength=axis.count)))
    return tuple(out)


def build_instance(sample: PathSample, grids: GridSpec | None = None,
                   noise: NoiseSpec | None = None, seed: int | None = None,
                   c_cap: float = DEFAULT_C_CAP, match_means: bool = True):
    """Reference cost from the clean sample, marginals from the noised one.

    With ``match_means`` the noised nu is exponentially tilted to share mu's
    mean, which binning and clipping otherwise break at the 1e-3 level.
    """
    grids = grids or GridSpec()
    cost, _ = build_reference(sample, grids, c_cap=c_cap)
    mu, nu, rho = noised_marginals(sample, noise, grids, seed=seed)
    if match_means:
        nu = match_mean(nu, mu.mean())
    return ProblemInstance(mu, nu, rho, cost)


def implied_marginal_from_calls(strikes, prices, tol: float | None = None):
    """Discrete density from call prices by second differences in strike.

    Returns a measure on the interior strikes. ``tol`` bounds how negative a
    second difference may be before NonConvexPrices is raised; it defaults to
    1e-10 times the largest price.
    """
    k = np.asarray(strikes, dtype=float)
    c = np.asarray(prices, dtype=float)
    if k.ndim != 1 or k.shape != c.shape or k.size < 3:
        raise ValueError("need matching 1-D strikes and prices with >= 3 points")
    step = np.diff(k)
    if np.any(step <= 0):
        raise ValueError("strikes must be strictly increasing")
    if not np.allclose(step, step[0], rtol=1e-9, atol=0):
        raise ValueError("strikes must be uniformly spaced")
    tol = 1e-10 * float(np.max(np.abs(c))) if tol is None else tol
    second = c[:-2] - 2.0 * c[1:-1] + c[2:]
    if np.any(second < -tol):
        worst = int(np.argmin(second)) + 1
        raise NonConvexPrices(
            f"butterfly {second.min():.3e} < 0 at strike {k[worst]}"
        )
    density = np.maximum(second, 0.0) / step[0] ** 2
    if density.sum() <= 0:
        raise NonConvexPrices("prices imply zero density on the interior")
    return DiscreteMeasure(k[1:-1], density / density.sum())


def split_periods(marginals, reference_builder, validate: bool = True):
    """One instance per consecutive pair of marginals.

    ``reference_builder(i, m_i, m_next)`` returns ``(rho, cost)`` for period
    ``i``. Validation failures are re-raised with ``.period`` set.
    """
    marginals = list(marginals)
    if len(marginals) < 2:
        raise ValueError("need at least two marginals")
    out = []
    for i, (a, b) in enumerate(zip(marginals[:-1], marginals[1:])):
        rho, cost = reference_builder(i, a, b)
        inst = ProblemInstance(a, b, rho, cost)
        if validate:
            try:
                validate_instance(inst)
            except Exception as exc:
                exc.period = i
                raise
        out.append(inst)
    return out
