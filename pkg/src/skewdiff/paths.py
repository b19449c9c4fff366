"""Path generation for skew random walks, skew Brownian motion and skew diffusions.

Three schemes produce trajectories of the same law:

* ``exact_step``   -- one-step sampling that is exact in distribution for any
                      step size, so dt only sets the functional resolution;
* ``euler_transformed`` -- Euler-Maruyama on the piecewise-linear transform of
                      the local-time SDE (the transform removes the local-time
                      term and leaves a discontinuous diffusion coefficient);
* ``skew_walk``    -- the discrete skew random walk with polygonal rescaling.

Trajectories live on a uniform time grid; positions exactly at 0 count as the
minus side everywhere.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import rng as rngmod
from .media import (
    InterfaceMedium,
    MultiMedium,
    alpha_of_lambda,
    local_time_gamma,
    mapped_interfaces,
    scale_map,
    scale_map_inverse,
)

SCHEMES = ("exact_step", "euler_transformed", "skew_walk")


class ConfigError(ValueError):
    """Simulation configuration violates a precondition."""


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run configuration.

    ``block_size`` fixes the path-block layout of the counter-based RNG
    streams; together with ``seed`` it makes runs bit-reproducible for any
    thread count.
    """

    n_paths: int = 10000
    dt: float = 1e-3
    horizon: float = 1.0
    seed: int = 0
    scheme: str = "exact_step"
    block_size: int = rngmod.DEFAULT_BLOCK_SIZE
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ConfigError(f"n_paths must be >= 1, got {self.n_paths}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.dt > self.horizon:
            raise ConfigError(f"dt={self.dt} exceeds horizon={self.horizon}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class PathSample:
    """A single discretized trajectory."""

    times: np.ndarray
    positions: np.ndarray
    edges: np.ndarray | None = None

    def __post_init__(self) -> None:
        t = np.asarray(self.times, float)
        x = np.asarray(self.positions, float)
        if t.shape != x.shape or t.ndim != 1:
            raise ValueError("times and positions must be 1-d arrays of equal length")
        if t.size and (t[0] != 0.0 or np.any(np.diff(t) <= 0)):
            raise ValueError("times must start at 0 and be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise ValueError("times and positions must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", x)


@dataclass(frozen=True)
class PathBatch:
    """Trajectories sharing one time grid: positions has shape (n_paths, n_times)."""

    times: np.ndarray
    positions: np.ndarray
    first_path_index: int = 0

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    def path(self, i: int) -> PathSample:
        return PathSample(self.times, self.positions[i])

    def __iter__(self) -> Iterator[PathSample]:
        return (self.path(i) for i in range(self.n_paths))


def as_batches(source) -> Iterable[PathBatch]:
    """Normalize a PathSample / PathBatch / iterable of batches to an iterable."""
    if isinstance(source, PathBatch):
        return (source,)
    if isinstance(source, PathSample):
        return (PathBatch(source.times, source.positions[None, :]),)
    return source


# ---------------------------------------------------------------------------
# skew random walk and its polygonal rescaling


def skew_walk(alpha: float, n_steps: int, seed_or_rng) -> np.ndarray:
    """Integer path of the alpha-skew random walk started at 0.

    Up-step probability is alpha at the origin and 1/2 elsewhere.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    gen = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else rngmod.stream(seed_or_rng)
    u = gen.random(n_steps)
    pos = np.empty(n_steps + 1, dtype=np.int64)
    pos[0] = 0
    s = 0
    for k in range(n_steps):
        p_up = alpha if s == 0 else 0.5
        s += 1 if u[k] < p_up else -1
        pos[k + 1] = s
    return pos


def skew_walk_endpoints(alpha: float, n_steps: int, n_walkers: int, gen: np.random.Generator) -> np.ndarray:
    """Endpoints S_n of ``n_walkers`` independent skew walks (vectorized)."""
    s = np.zeros(n_walkers, dtype=np.int64)
    for _ in range(n_steps):
        u = gen.random(n_walkers)
        p_up = np.where(s == 0, alpha, 0.5)
        s += np.where(u < p_up, 1, -1)
    return s


def polygonal_rescale(walk: np.ndarray, n: int) -> PathSample:
    """Rescale the first ``n`` steps onto [0,1]: value S_k/sqrt(n) at t=k/n."""
    walk = np.asarray(walk)
    if walk.size < n + 1:
        raise ValueError(f"walk has {walk.size - 1} steps, need at least {n}")
    times = np.arange(n + 1) / n
    return PathSample(times, walk[: n + 1] / np.sqrt(n))


# ---------------------------------------------------------------------------
# exact one-step sampling of skew Brownian motion

TOUCH_LOG_FLOOR = -745.0  # exp underflows below this; treated as never touched


def exact_step(alpha: float, x, dt: float, rng: np.random.Generator):
    """One exact draw from the skew-BM transition kernel p_alpha(dt, x, .).

    Construction: take a free Gaussian step; decide whether the continuous
    path bridged through the interface (probability exp(-2 x w / dt) when the
    endpoints share the origin's side, certain otherwise); if it touched,
    redraw the endpoint's sign as + with probability alpha.  The resulting
    density is identical to the three-component truncated-Gaussian mixture
    decomposition of the kernel but is valid for every (x, alpha) case.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    y = _exact_step_mixed_alpha(np.full_like(np.atleast_1d(x), alpha), np.atleast_1d(x), dt, rng)
    return float(y[0]) if scalar else y


# ---------------------------------------------------------------------------
# block drivers


def _steps_per_block(cfg: SimConfig) -> tuple[int, np.ndarray]:
    n_steps = cfg.n_steps
    if abs(n_steps * cfg.dt - cfg.horizon) > 1e-9 * max(1.0, cfg.horizon):
        raise ConfigError(f"horizon={cfg.horizon} is not an integer multiple of dt={cfg.dt}")
    return n_steps, cfg.times()


def _sbm_block(alpha: float, b0: float, n: int, n_steps: int, dt: float, rng) -> np.ndarray:
    out = np.empty((n, n_steps + 1))
    out[:, 0] = b0
    b = np.full(n, b0)
    for k in range(n_steps):
        b = exact_step(alpha, b, dt, rng)
        out[:, k + 1] = b
    return out


def iter_skew_diffusion(medium: InterfaceMedium, config: SimConfig, x0: float = 0.0) -> Iterator[PathBatch]:
    """Stream path blocks of the lam-skew diffusion (exact one-step sampling)."""
    n_steps, times = _steps_per_block(config)
    alpha = alpha_of_lambda(medium)
    b0 = float(scale_map_inverse(medium, x0))

    def run(j: int, n: int, gen: np.random.Generator) -> PathBatch:
        b = _sbm_block(alpha, b0, n, n_steps, config.dt, gen)
        return PathBatch(times, np.asarray(scale_map(medium, b)), j * config.block_size)

    for batch in rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads):
        yield batch


def simulate_skew_diffusion(medium: InterfaceMedium, config: SimConfig, x0: float = 0.0) -> PathBatch:
    """All trajectories of the lam-skew diffusion in one batch."""
    batches = list(iter_skew_diffusion(medium, config, x0))
    return _concat(batches)


def iter_euler_transformed(medium: InterfaceMedium, config: SimConfig, x0: float = 0.0) -> Iterator[PathBatch]:
    """Stream path blocks from the transformed Euler-Maruyama scheme.

    The piecewise-linear map F(x) = x for x <= 0, (1-gamma) x for x > 0
    turns the local-time SDE into dY = sigma(Y) dB with piecewise-constant
    sigma; the scheme is a plain Euler step on Y followed by inversion.
    """
    n_steps, times = _steps_per_block(config)
    gamma = local_time_gamma(medium)
    shrink = 1.0 - gamma
    sig_plus = shrink * np.sqrt(medium.d_plus)
    sig_minus = np.sqrt(medium.d_minus)
    y0 = x0 * shrink if x0 > 0 else x0
    sdt = np.sqrt(config.dt)

    def run(j: int, n: int, gen: np.random.Generator) -> PathBatch:
        out = np.empty((n, n_steps + 1))
        y = np.full(n, y0)
        out[:, 0] = y
        for k in range(n_steps):
            sig = np.where(y > 0.0, sig_plus, sig_minus)
            y = y + sig * sdt * gen.standard_normal(n)
            if not np.all(np.isfinite(y)):
                raise FloatingPointError("euler_transformed produced non-finite state")
            out[:, k + 1] = y
        x = np.where(out > 0.0, out / shrink, out)
        return PathBatch(times, x, j * config.block_size)

    for batch in rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads):
        yield batch


def euler_transformed(medium: InterfaceMedium, config: SimConfig, x0: float = 0.0) -> PathBatch:
    """All trajectories from the transformed Euler scheme in one batch."""
    return _concat(list(iter_euler_transformed(medium, config, x0)))


def multi_step_cap(multi: MultiMedium, dt: float) -> None:
    """Reject step sizes for which one step could span two interfaces.

    With 6 sqrt(maxD dt) below the smallest interface gap, a double crossing
    has probability mass below exp(-18) and the nearest-interface exact step
    is exact up to that event.
    """
    gaps = np.diff(np.asarray(multi.interfaces))
    if gaps.size == 0:
        return
    bound = 6.0 * np.sqrt(max(multi.diffusivities) * dt)
    if bound >= gaps.min():
        raise ConfigError(
            f"dt too large for interface gaps: 6*sqrt(maxD*dt)={bound:.4g} "
            f">= min gap {gaps.min():.4g}"
        )


def iter_multi(multi: MultiMedium, config: SimConfig, x0: float = 0.0) -> Iterator[PathBatch]:
    """Stream path blocks of the multiple skew diffusion.

    Steps are taken in the rescaled coordinate in the frame of the nearest
    interface, with that interface's transmission probability.
    """
    n_steps, times = _steps_per_block(config)
    multi_step_cap(multi, config.dt)
    y_ifs = mapped_interfaces(multi)
    alphas = multi.alphas()
    mids = 0.5 * (y_ifs[1:] + y_ifs[:-1])
    b0 = float(scale_map_inverse(multi, x0))

    def run(j: int, n: int, gen: np.random.Generator) -> PathBatch:
        out = np.empty((n, n_steps + 1))
        b = np.full(n, b0)
        out[:, 0] = b
        for k in range(n_steps):
            near = np.searchsorted(mids, b)
            a_loc = alphas[near]
            y_loc = y_ifs[near]
            b = y_loc + _exact_step_mixed_alpha(a_loc, b - y_loc, config.dt, gen)
            out[:, k + 1] = b
        return PathBatch(times, np.asarray(scale_map(multi, out)), j * config.block_size)

    for batch in rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads):
        yield batch


def simulate_multi(multi: MultiMedium, config: SimConfig, x0: float = 0.0) -> PathBatch:
    """All trajectories of the multiple skew diffusion in one batch."""
    return _concat(list(iter_multi(multi, config, x0)))


def _exact_step_mixed_alpha(alpha: np.ndarray, x: np.ndarray, dt: float, rng) -> np.ndarray:
    """Vectorized exact step with a per-element transmission probability."""
    s = np.sqrt(dt)
    flip = x < 0.0
    a = np.where(flip, 1.0 - alpha, alpha)
    z = np.abs(x)
    w = z + s * rng.standard_normal(x.shape)
    u = rng.random(x.shape)
    log_p = -2.0 * z * np.maximum(w, 0.0) / dt
    p_touch = np.where(log_p < TOUCH_LOG_FLOOR, 0.0, np.exp(log_p))
    touched = u < p_touch
    positive = u < a * p_touch
    y = np.where(touched, np.where(positive, np.abs(w), -np.abs(w)), w)
    return np.where(flip, -y, y)


def simulate(medium, config: SimConfig, x0: float = 0.0) -> PathBatch:
    """Dispatch on ``config.scheme`` (exact_step / euler_transformed / skew_walk)."""
    return _concat(list(iter_paths(medium, config, x0)))


def iter_paths(medium, config: SimConfig, x0: float = 0.0) -> Iterator[PathBatch]:
    if isinstance(medium, MultiMedium):
        yield from iter_multi(medium, config, x0)
        return
    if config.scheme == "exact_step":
        yield from iter_skew_diffusion(medium, config, x0)
    elif config.scheme == "euler_transformed":
        yield from iter_euler_transformed(medium, config, x0)
    else:
        yield from _iter_walk_paths(medium, config, x0)


def _iter_walk_paths(medium: InterfaceMedium, config: SimConfig, x0: float = 0.0) -> Iterator[PathBatch]:
    """Rescaled skew-walk trajectories mapped through the diffusivity rescaling.

    Each path uses n = horizon/dt walk steps embedded at times k*dt, i.e. the
    walk runs at the diffusive scaling of the step grid.
    """
    if x0 != 0.0:
        raise ConfigError("skew_walk scheme starts at the interface (x0 = 0)")
    n_steps, times = _steps_per_block(config)
    alpha = alpha_of_lambda(medium)
    scale = np.sqrt(config.dt)

    def run(j: int, n: int, gen: np.random.Generator) -> PathBatch:
        s = np.zeros(n, dtype=np.int64)
        out = np.empty((n, n_steps + 1))
        out[:, 0] = 0.0
        for k in range(n_steps):
            u = gen.random(n)
            p_up = np.where(s == 0, alpha, 0.5)
            s += np.where(u < p_up, 1, -1)
            out[:, k + 1] = s
        b = out * scale
        return PathBatch(times, np.asarray(scale_map(medium, b)), j * config.block_size)

    for batch in rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads):
        yield batch


def _concat(batches: list[PathBatch]) -> PathBatch:
    if len(batches) == 1:
        return batches[0]
    times = batches[0].times
    return PathBatch(times, np.concatenate([b.positions for b in batches], axis=0), 0)


# ---------------------------------------------------------------------------
# stepwise streaming (no full-path storage)


def _make_stepper(medium, config: SimConfig, x0: float):
    """Per-block stepping closure: returns (init(n), advance(state, rng), to_x(state)).

    States live in the scheme's internal coordinate; ``to_x`` maps them to
    physical positions.  Draw order matches the batch producers.
    """
    if isinstance(medium, MultiMedium):
        multi_step_cap(multi := medium, config.dt)
        y_ifs = mapped_interfaces(multi)
        alphas = multi.alphas()
        mids = 0.5 * (y_ifs[1:] + y_ifs[:-1])
        b0 = float(scale_map_inverse(multi, x0))

        def init(n):
            return np.full(n, b0)

        def advance(b, rng):
            near = np.searchsorted(mids, b)
            y_loc = y_ifs[near]
            return y_loc + _exact_step_mixed_alpha(alphas[near], b - y_loc, config.dt, rng)

        def to_x(b):
            return np.asarray(scale_map(multi, b))

        return init, advance, to_x

    if config.scheme == "exact_step":
        alpha = alpha_of_lambda(medium)
        b0 = float(scale_map_inverse(medium, x0))

        def init(n):
            return np.full(n, b0)

        def advance(b, rng):
            return _exact_step_mixed_alpha(np.full_like(b, alpha), b, config.dt, rng)

        def to_x(b):
            return np.asarray(scale_map(medium, b))

        return init, advance, to_x

    if config.scheme == "euler_transformed":
        gamma = local_time_gamma(medium)
        shrink = 1.0 - gamma
        sig_plus = shrink * np.sqrt(medium.d_plus)
        sig_minus = np.sqrt(medium.d_minus)
        y0 = x0 * shrink if x0 > 0 else x0
        sdt = np.sqrt(config.dt)

        def init(n):
            return np.full(n, y0)

        def advance(y, rng):
            sig = np.where(y > 0.0, sig_plus, sig_minus)
            return y + sig * sdt * rng.standard_normal(y.shape)

        def to_x(y):
            return np.where(y > 0.0, y / shrink, y)

        return init, advance, to_x

    # skew_walk scheme
    if x0 != 0.0:
        raise ConfigError("skew_walk scheme starts at the interface (x0 = 0)")
    alpha = alpha_of_lambda(medium)
    scale = np.sqrt(config.dt)

    def init(n):
        return np.zeros(n, dtype=np.int64)

    def advance(s, rng):
        u = rng.random(s.shape)
        p_up = np.where(s == 0, alpha, 0.5)
        return s + np.where(u < p_up, 1, -1)

    def to_x(s):
        return np.asarray(scale_map(medium, s * scale))

    return init, advance, to_x


def run_stepwise(medium, config: SimConfig, x0: float, make_consumer):
    """Drive per-block consumers through the step stream; results in block order.

    ``make_consumer(block_index, n, coin_rng)`` returns an object with
    ``step(k, x_prev, x_cur)`` called for k = 1..n_steps and ``result()``;
    memory use stays at two position vectors per block.  ``coin_rng`` is a
    detection stream independent of path generation.
    """
    n_steps = config.n_steps
    if abs(n_steps * config.dt - config.horizon) > 1e-9 * max(1.0, config.horizon):
        raise ConfigError(f"horizon={config.horizon} is not an integer multiple of dt={config.dt}")
    init, advance, to_x = _make_stepper(medium, config, x0)

    def run(j: int, n: int, gen: np.random.Generator):
        coin = rngmod.stream(config.seed, (1 << 32) + j)
        consumer = make_consumer(j, n, coin)
        state = init(n)
        x_prev = to_x(state)
        for k in range(1, n_steps + 1):
            state = advance(state, gen)
            x_cur = to_x(state)
            stop = consumer.step(k, x_prev, x_cur)
            x_prev = x_cur
            if stop:
                break
        return consumer.result()

    return rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads)


# ---------------------------------------------------------------------------
# CSV export


def write_paths_csv(source, fileobj: io.TextIOBase) -> int:
    """Write ``path_id,t,x[,edge]`` rows with full round-trip float precision.

    Returns the number of data rows written; line endings are LF.
    """
    rows = 0
    header_written = False
    path_id = 0
    for batch in as_batches(source):
        edges = getattr(batch, "edges", None)
        if not header_written:
            fileobj.write("path_id,t,x,edge\n" if edges is not None else "path_id,t,x\n")
            header_written = True
        times = batch.times.tolist()
        for i in range(batch.n_paths):
            xs = batch.positions[i].tolist()
            if edges is not None:
                es = edges[i]
                for t, x, e in zip(times, xs, es):
                    fileobj.write(f"{path_id},{t!r},{x!r},{int(e)}\n")
            else:
                for t, x in zip(times, xs):
                    fileobj.write(f"{path_id},{t!r},{x!r}\n")
            rows += len(times)
            path_id += 1
    return rows
