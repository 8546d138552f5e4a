"""Bayesian optimization of the pulse design with a Matern-5/2 GP and expected improvement.

The search space is a box; selected dimensions are integer valued. The loop is
Propose (maximize EI on the GP surrogate) -> Measure (noisy objective with a
standard error) -> Update (append to the history and refit).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize as spo, stats
from scipy.stats import qmc

from .errors import InvalidParameterError, NumericFailureError

log = logging.getLogger(__name__)

N_INIT = 8
N_RESTARTS = 5
N_CANDIDATES = 256
N_LOCAL = 5
JITTER_START = 1e-10
JITTER_MAX = 1e-4
LOG_LS_BOUNDS = (math.log(1e-2), math.log(10.0))
LOG_VAR_BOUNDS = (math.log(1e-3), math.log(1e3))


@dataclass
class DesignPoint:
    d: tuple
    r_bar: float
    s_r: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.s_r >= 0:
            raise InvalidParameterError(f"standard error must be >= 0, got {self.s_r!r}")
        self.d = tuple(float(v) for v in self.d)

    def to_dict(self) -> dict:
        return {"d": list(self.d), "r_bar": self.r_bar, "s_r": self.s_r, **self.extra}

    @classmethod
    def from_dict(cls, dct: dict) -> "DesignPoint":
        extra = {k: v for k, v in dct.items() if k not in ("d", "r_bar", "s_r")}
        return cls(tuple(dct["d"]), float(dct["r_bar"]), float(dct.get("s_r", 0.0)), extra)


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray
    integer: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo):
            raise InvalidParameterError("bounds need matching 1-D lower < upper arrays")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "integer", tuple(sorted(int(i) for i in self.integer)))

    @property
    def dim(self) -> int:
        return self.lower.size

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)

    def round(self, x) -> np.ndarray:
        """Clip into the box and round the integer dimensions."""
        x = np.clip(np.array(x, dtype=float), self.lower, self.upper)
        if self.integer:
            idx = list(self.integer)
            x[..., idx] = np.clip(np.round(x[..., idx]), np.ceil(self.lower[idx]), np.floor(self.upper[idx]))
        return x

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        ok = np.all(x >= self.lower) and np.all(x <= self.upper)
        return bool(ok and all(float(x[i]).is_integer() for i in self.integer))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "integer": list(self.integer)}

    @classmethod
    def from_dict(cls, d: dict) -> "Bounds":
        return cls(np.asarray(d["lower"]), np.asarray(d["upper"]), tuple(d.get("integer", ())))


# -- Gaussian process ----------------------------------------------------------


def matern52(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray, variance: float) -> np.ndarray:
    diff = (A[:, None, :] - B[None, :, :]) / lengthscales
    r = np.sqrt(np.sum(diff**2, axis=-1))
    s5r = math.sqrt(5.0) * r
    return variance * (1.0 + s5r + 5.0 / 3.0 * r**2) * np.exp(-s5r)


def _cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor with escalating diagonal jitter."""
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    jitter = JITTER_START
    while jitter <= JITTER_MAX:
        try:
            return linalg.cholesky(K + jitter * scale * np.eye(len(K)), lower=True), jitter * scale
        except linalg.LinAlgError:
            jitter *= 10
    raise NumericFailureError("kernel matrix is not positive definite even with maximal jitter")


class GaussianProcess:
    """Zero-mean GP with a Matern-5/2 ARD kernel and fixed per-point noise.

    Inputs are expected in the unit cube. Targets are centred and scaled
    internally; predictions are returned in the original units.
    """

    def __init__(self, lengthscales=None, variance: float = 1.0):
        self.lengthscales = None if lengthscales is None else np.asarray(lengthscales, dtype=float)
        self.variance = float(variance)

    @staticmethod
    def _nll(log_theta, X, y, noise) -> tuple[float, np.ndarray]:
        """Negative log marginal likelihood and its gradient in log parameters."""
        ls = np.exp(log_theta[:-1])
        var = math.exp(log_theta[-1])
        diff2 = ((X[:, None, :] - X[None, :, :]) / ls) ** 2
        r = np.sqrt(np.sum(diff2, axis=-1))
        s5r = math.sqrt(5.0) * r
        e = np.exp(-s5r)
        K0 = var * (1.0 + s5r + 5.0 / 3.0 * r**2) * e
        try:
            L, _ = _cholesky(K0 + np.diag(noise))
        except NumericFailureError:
            return 1e25, np.zeros_like(log_theta)
        alpha = linalg.cho_solve((L, True), y)
        nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * len(y) * math.log(2 * math.pi)
        W = linalg.cho_solve((L, True), np.eye(len(y))) - np.outer(alpha, alpha)
        dk_common = var * 5.0 / 3.0 * (1.0 + s5r) * e
        grad = np.empty_like(log_theta)
        for d in range(len(ls)):
            grad[d] = 0.5 * np.sum(W * dk_common * diff2[:, :, d])
        grad[-1] = 0.5 * np.sum(W * K0)
        return float(nll), grad

    def fit(self, X, y, noise_var=None, rng=None, restarts: int = N_RESTARTS, optimize: bool = True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        n, dim = X.shape
        self.y_mean = float(np.mean(y))
        self.y_scale = float(np.std(y)) or 1.0
        ys = (y - self.y_mean) / self.y_scale
        noise = np.zeros(n) if noise_var is None else np.asarray(noise_var, dtype=float) / self.y_scale**2
        if self.lengthscales is None:
            self.lengthscales = np.full(dim, 0.3)
        if optimize and n >= 2:
            rng = np.random.default_rng(rng)
            bounds = [LOG_LS_BOUNDS] * dim + [LOG_VAR_BOUNDS]
            starts = [np.append(np.log(self.lengthscales), math.log(self.variance))]
            for _ in range(restarts - 1):
                starts.append(np.array([rng.uniform(*b) for b in bounds]))
            best = None
            for x0 in starts:
                x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
                res = spo.minimize(
                    self._nll, x0, args=(X, ys, noise), jac=True, method="L-BFGS-B", bounds=bounds
                )
                if best is None or res.fun < best.fun:
                    best = res
            self.lengthscales = np.exp(best.x[:-1])
            self.variance = float(math.exp(best.x[-1]))
        K = matern52(X, X, self.lengthscales, self.variance) + np.diag(noise)
        self.L, self.jitter = _cholesky(K)
        self.alpha = linalg.cho_solve((self.L, True), ys)
        self.X = X
        return self

    def predict(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (latent function, original units)."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = matern52(Xs, self.X, self.lengthscales, self.variance)
        mu = Ks @ self.alpha
        v = linalg.solve_triangular(self.L, Ks.T, lower=True)
        var = np.maximum(self.variance - np.sum(v**2, axis=0), 0.0)
        return self.y_mean + self.y_scale * mu, var * self.y_scale**2

    def predict_grad(self, x) -> tuple[float, float, np.ndarray, np.ndarray]:
        """Mean, variance and their gradients at a single point."""
        x = np.asarray(x, dtype=float)
        diff = (x[None, :] - self.X) / self.lengthscales**2
        r = np.sqrt(np.sum(((x[None, :] - self.X) / self.lengthscales) ** 2, axis=-1))
        s5r = math.sqrt(5.0) * r
        e = np.exp(-s5r)
        k = self.variance * (1.0 + s5r + 5.0 / 3.0 * r**2) * e
        dk = -(self.variance * 5.0 / 3.0 * (1.0 + s5r) * e)[:, None] * diff
        v = linalg.solve_triangular(self.L, k, lower=True)
        dv = linalg.solve_triangular(self.L, dk, lower=True)
        mu = self.y_mean + self.y_scale * float(k @ self.alpha)
        var = max(self.variance - float(v @ v), 0.0) * self.y_scale**2
        dmu = self.y_scale * (dk.T @ self.alpha)
        dvar = -2.0 * (dv.T @ v) * self.y_scale**2
        return mu, var, dmu, dvar


def expected_improvement(mu, var, best: float) -> np.ndarray:
    """E[max(f - best, 0)] for f ~ N(mu, var); equals max(mu - best, 0) when var = 0."""
    mu = np.asarray(mu, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    gain = mu - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, gain / sd, 0.0)
        ei = np.where(sd > 0, gain * stats.norm.cdf(z) + sd * stats.norm.pdf(z), np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


# -- proposal ------------------------------------------------------------------


def _is_duplicate(x: np.ndarray, seen: np.ndarray) -> bool:
    return bool(len(seen)) and bool(np.any(np.all(np.isclose(seen, x, rtol=0, atol=1e-9), axis=1)))


def _sobol_points(bounds: Bounds, n: int, seed) -> np.ndarray:
    sampler = qmc.Sobol(d=bounds.dim, scramble=True, seed=np.random.default_rng(seed))
    m = max(3, math.ceil(math.log2(max(n, 1))))
    return bounds.from_unit(sampler.random_base2(m))


def propose_next(
    history: Sequence[DesignPoint],
    bounds: Bounds,
    seed,
    n_init: int = N_INIT,
    gp: GaussianProcess | None = None,
    init_points: np.ndarray | None = None,
) -> np.ndarray:
    """Next design to measure.

    The first ``n_init`` proposals walk a scrambled Sobol sequence; afterwards
    a GP is fitted to the history and expected improvement over the best
    measured mean is maximized from ``N_CANDIDATES`` random starts plus local
    refinement of the best few. Integer dimensions are relaxed during the
    search and rounded afterwards; already measured designs are skipped.
    ``init_points`` fixes the cold-start sequence across calls.
    """
    rng = np.random.default_rng(seed)
    seen = np.array([h.d for h in history], dtype=float).reshape(-1, bounds.dim)
    if len(history) < n_init:
        if init_points is None:
            init_points = _sobol_points(bounds, 2 * n_init, rng)
        for x in bounds.round(init_points):
            if not _is_duplicate(x, seen):
                return x
        return _random_unseen(bounds, seen, rng)

    X = bounds.to_unit(seen)
    y = np.array([h.r_bar for h in history])
    noise = np.array([h.s_r for h in history]) ** 2
    gp = gp or GaussianProcess()
    gp.fit(X, y, noise, rng=rng)
    best = float(np.max(y))

    def neg_ei(u):
        mu, var, dmu, dvar = gp.predict_grad(u)
        sd = math.sqrt(var)
        if sd <= 0:
            return -max(mu - best, 0.0), -dmu * (mu > best)
        z = (mu - best) / sd
        cdf, pdf = stats.norm.cdf(z), stats.norm.pdf(z)
        ei = (mu - best) * cdf + sd * pdf
        return -ei, -(cdf * dmu + pdf * dvar / (2 * sd))

    cand = rng.random((N_CANDIDATES, bounds.dim))
    mu, var = gp.predict(cand)
    ei = expected_improvement(mu, var, best)
    starts = cand[np.argsort(-ei)[:N_LOCAL]]
    pool = [cand]
    for x0 in starts:
        res = spo.minimize(neg_ei, x0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * bounds.dim)
        pool.append(res.x[None, :])
    pool = bounds.round(bounds.from_unit(np.vstack(pool)))
    mu, var = gp.predict(bounds.to_unit(pool))
    order = np.argsort(-expected_improvement(mu, var, best), kind="stable")
    for i in order:
        if not _is_duplicate(pool[i], seen):
            return pool[i]
    return _random_unseen(bounds, seen, rng)


def _random_unseen(bounds: Bounds, seen: np.ndarray, rng, tries: int = 1000) -> np.ndarray:
    for _ in range(tries):
        x = bounds.round(bounds.from_unit(rng.random(bounds.dim)))
        if not _is_duplicate(x, seen):
            return x
    raise NumericFailureError("could not find an unmeasured design inside the bounds")


Objective = Callable[[np.ndarray, np.random.SeedSequence], "tuple[float, float]"]


def optimize(
    objective: Objective,
    bounds: Bounds,
    budget: int,
    seed,
    n_init: int = N_INIT,
    history: list[DesignPoint] | None = None,
    callback: Callable[[DesignPoint], None] | None = None,
) -> tuple[DesignPoint, list[DesignPoint]]:
    """Run ``budget`` Propose -> Measure -> Update iterations.

    ``objective(d, seed)`` returns ``(r_bar, s_r)``. Returns the design with the
    highest measured mean and the full history.
    """
    if budget < 1:
        raise InvalidParameterError(f"budget must be >= 1, got {budget!r}")
    history = list(history or [])
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    gp = GaussianProcess()
    init_points = _sobol_points(bounds, 2 * n_init, root.spawn(1)[0])
    for it in range(budget):
        s_prop, s_eval = root.spawn(2)
        d = propose_next(history, bounds, s_prop, n_init=n_init, gp=gp, init_points=init_points)
        r_bar, s_r = objective(d, s_eval)
        point = DesignPoint(tuple(d), float(r_bar), float(s_r), {"iteration": len(history)})
        history.append(point)
        if callback is not None:
            callback(point)
        log.debug("iteration %d: d=%s r=%.4g", it, point.d, point.r_bar)
    best = max(history, key=lambda p: p.r_bar)
    return best, history


def random_search(objective: Objective, bounds: Bounds, budget: int, seed) -> tuple[DesignPoint, list[DesignPoint]]:
    """Baseline: ``budget`` uniform draws in the box."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(root.spawn(1)[0])
    history = []
    for _ in range(budget):
        d = bounds.round(bounds.from_unit(rng.random(bounds.dim)))
        r_bar, s_r = objective(d, root.spawn(1)[0])
        history.append(DesignPoint(tuple(d), float(r_bar), float(s_r)))
    return max(history, key=lambda p: p.r_bar), history


# -- benchmark and the pulse-design objective ---------------------------------


def quadratic_benchmark(d0: Sequence[float]) -> Objective:
    """Noiseless f(d) = -||d - d0||^2 with a known maximum of 0 at d0."""
    d0 = np.asarray(d0, dtype=float)

    def f(d, seed=None):
        return -float(np.sum((np.asarray(d, dtype=float) - d0) ** 2)), 0.0

    return f


def evaluate_design(
    d: Sequence[float],
    trials: int,
    duration: float,
    seed,
    sample_rate: float,
    bob,
    willie,
    delta: float,
    every: int = 5,
) -> tuple[float, float]:
    """Mean and standard error of r = 2 C_bsc n_p alpha_n over calibration-style trials.

    ``d = (n_s_pilot, n_s_data, c_p, c_q)``; ``bob``/``willie`` are
    ChannelParams. Every ``every``-th slot carries a random symbol and Bob
    decodes with the known key; alpha_n follows from Willie's SNR for the
    design. A design whose pilot is empty decodes at chance.
    """
    from . import covertness_budget as cb
    from .channel import transmit
    from .errors import UnusablePilotError
    from .pulse_shaping import PulseParams
    from .receiver import decode_frame
    from .transmitter import alice_transmission

    params = PulseParams(int(round(d[0])), int(round(d[1])), float(d[2]), float(d[3]))
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    r = []
    n_p = None
    alpha = None
    for ss in root.spawn(trials):
        s_tx, s_ch = ss.spawn(2)
        tx = alice_transmission(params, duration, sample_rate, 0.0, s_tx, preamble_amplitude=0.0, calibration=True)
        n_p = tx.key.n_p
        if alpha is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                alpha = cb.alpha_n(delta, n_p, willie.sigma2, willie.a, params.c_q, params.r_pq)
        slots = tx.frame.alice_on[: n_p * params.n_s].reshape(n_p, params.n_s)
        rx = transmit(slots, bob, s_ch).reshape(-1)
        try:
            rep = decode_frame(rx, tx.key, params, tx.data_bits)
            C = rep.C_bsc
        except UnusablePilotError:
            C = 0.0
        r.append(2 * C * n_p * alpha)
    r = np.asarray(r)
    if not np.any(r > 0):
        warnings.warn(f"design {tuple(d)} produced zero throughput in every trial", stacklevel=2)
    se = float(np.std(r, ddof=1) / math.sqrt(len(r))) if len(r) > 1 else 0.0
    return float(np.mean(r)), se
