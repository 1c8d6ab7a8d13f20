"""Central-cut ellipsoid method and level-set dichotomy minimization.

Sets and functions are given only through oracles. A set oracle answers
``oracle(y, gamma)`` with :data:`~kserver.antiserver.Feasible` or a
:class:`~kserver.antiserver.Cut` whose vector ``c`` satisfies ``c.x <= c.y``
for every point of the set.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .antiserver import Cut, Feasible
from .errors import Infeasible, IterationBudgetExceeded

SYMMETRIZE_EVERY = 16
EIG_FLOOR = 1e-300


@dataclass
class OracleConvexSet:
    dim: int
    radius: float
    oracle: Callable
    center: np.ndarray | None = None

    def start(self):
        if self.center is None:
            return np.zeros(self.dim)
        return np.asarray(self.center, dtype=float)


@dataclass
class OracleConvexFunction:
    """Convex function with value/gradient oracles and its constants.

    ``interval`` is a pair ``(lo, hi)`` known to contain the minimum value of
    the function over the set it is minimized on.
    """

    value: Callable
    gradient: Callable
    lipschitz: float
    alpha: float
    interval: tuple
    value_grad: Callable | None = None

    def both(self, y):
        if self.value_grad is not None:
            return self.value_grad(y)
        return self.value(y), self.gradient(y)


@dataclass
class NearPoint:
    x: np.ndarray
    iterations: int
    shape: np.ndarray | None = None
    logdet: float | None = None


@dataclass
class SmallVolume:
    center: np.ndarray
    shape: np.ndarray
    log_volume: float
    iterations: int
    certified_empty: bool = False


def iteration_cap(d, R, eps):
    return int(10 * d * (d + 1) * math.log(max(R / eps, math.e))) + 100


def _log_unit_ball(d):
    return (d / 2) * math.log(math.pi) - math.lgamma(d / 2 + 1)


def central_cut_ellipsoid(K: OracleConvexSet, eps, *, lower_bound=None, max_iter=None, warm=None,
                          gamma=None):
    """Find a point within ``eps`` of ``K`` or certify tiny volume.

    Starts from the ball of radius ``K.radius`` around ``K.start()``, or from
    ``warm = (center, shape, logdet)`` when an ellipsoid known to contain ``K``
    is available, and cuts
    through the center until the oracle accepts the center at ``gamma = eps``
    (:class:`NearPoint`) or the ellipsoid volume drops to ``eps**(2d)``
    (:class:`SmallVolume`).

    ``gamma`` (default ``eps``) is the oracle tolerance at which a center is
    accepted; the volume target stays ``eps**(2d)``.

    ``lower_bound`` is an optional callback ``(center, shape) -> bool`` that may
    prove the set empty early; it is used by :func:`minimize_convex`.
    """
    d = K.dim
    R = float(K.radius)
    eps = float(eps)
    gamma = eps if gamma is None else float(gamma)
    cap = max_iter if max_iter is not None else iteration_cap(d, R, eps)
    if warm is None:
        c = K.start().copy()
        A = np.eye(d) * R * R
        logdet = 2 * d * math.log(R)
    else:
        c, A, logdet = warm[0].copy(), warm[1].copy(), warm[2]
    log_target = 2 * d * math.log(eps)
    log_ball = _log_unit_ball(d)
    blow = 1 + 1 / (4 * d * d)
    if d > 1:
        scale = d * d / (d * d - 1.0) * blow
        dlog = d * math.log(scale) + math.log((d - 1) / (d + 1))
    else:
        dlog = math.log(0.25)
    for it in range(cap):
        ans = K.oracle(c, gamma)
        if ans:
            return NearPoint(c, it, A, logdet)
        a = ans.c
        Aa = A @ a
        q = float(a @ Aa)
        if q <= 0:
            return SmallVolume(c, A, -math.inf, it)
        b = Aa / math.sqrt(q)
        if d > 1:
            c = c - b / (d + 1)
            A = scale * (A - (2.0 / (d + 1)) * np.outer(b, b))
        else:
            c = c - b / 2
            A = A / 4
        logdet += dlog
        if it % SYMMETRIZE_EVERY == SYMMETRIZE_EVERY - 1:
            A = (A + A.T) / 2
            w, V = np.linalg.eigh(A)
            if w.min() <= EIG_FLOOR:
                A = (V * np.maximum(w, EIG_FLOOR)) @ V.T
        if log_ball + logdet / 2 <= log_target:
            return SmallVolume(c, A, log_ball + logdet / 2, it + 1)
        if lower_bound is not None and lower_bound(c, A):
            return SmallVolume(c, A, log_ball + logdet / 2, it + 1, certified_empty=True)
    raise IterationBudgetExceeded(f"no outcome after {cap} iterations (d={d})")


class _LevelSet:
    """Separation oracle of ``{f <= A} cap K``."""

    def __init__(self, f: OracleConvexFunction, K: OracleConvexSet, level):
        self.f, self.K, self.level = f, K, level
        self.last = None  # (y, f(y), grad) at the last center inside K

    def __call__(self, y, gamma):
        ans = self.K.oracle(y, gamma)
        if not ans:
            self.last = None
            return ans
        val, g = self.f.both(y)
        if val <= self.level:
            self.last = None
            return Feasible
        self.last = (y, val, g)
        norm = np.abs(g).max()
        if norm == 0:
            return Feasible
        return Cut(g / norm, val - self.level, "level")

    def certify(self, c, A):
        # f(x) >= f(y) + g.(x - y) and the ellipsoid {(x-c)'A^{-1}(x-c) <= 1}
        # contains the level set, so its minimum bounds f from below there
        if self.last is None:
            return False
        y, v, g = self.last
        lower = v + float(g @ (c - y)) - math.sqrt(max(float(g @ A @ g), 0.0))
        return lower > self.level


def minimize_convex(f: OracleConvexFunction, K: OracleConvexSet, eps, *, early_exit=True, gamma=None):
    """Approximate minimizer of a strongly convex ``f`` over ``K`` by dichotomy.

    With ``eps' = alpha * eps**2 / 8`` the threshold interval is halved until
    its width drops below ``eps'/2``; each probe asks the ellipsoid method (at
    precision ``eps/2``) for a point of ``{f <= A} cap K``. The final run at
    the upper endpoint returns the point.

    After a successful probe the upper endpoint also drops to
    ``f(y) + L gamma``, which bounds the value at the nearest point of ``K``.

    Oracles measure constraint violation, not distance, and a point that is
    only near ``K`` may undercut the minimum by ``L`` times its distance. The
    acceptance tolerance is therefore ``gamma = min(eps/2, eps'/(L sqrt d))``;
    with it the value at the nearest point of ``K`` stays within ``3 eps'`` of
    the minimum, which strong convexity turns into distance ``eps``. Sets
    with an equality constraint have no interior at that scale; callers pass
    a looser ``gamma`` (such as ``eps/2``) for them.
    ``early_exit`` lets a probe stop as soon as convexity proves the level set
    empty (``f(y) - sqrt(g'Ag) > A`` for the current ellipsoid); this only
    shortens probes that would end in :class:`SmallVolume` anyway.

    Level sets shrink as the threshold drops, so the ellipsoid held when a
    probe succeeds still contains every later level set (all later thresholds
    lie below it) and later probes start from it instead of the full ball.
    """
    eps = float(eps)
    eps1 = f.alpha * eps * eps / 8
    lo, hi = (float(v) for v in f.interval)
    if hi < lo:
        raise Infeasible("empty value interval")
    if gamma is None:
        gamma = min(eps / 2, eps1 / (max(f.lipschitz, 1e-300) * math.sqrt(K.dim)))
    gamma = float(gamma)
    cap = iteration_cap(K.dim, float(K.radius), min(eps1, gamma))
    found = None
    warm = None

    def probe(level):
        nonlocal warm
        lvl = _LevelSet(f, K, level)
        K_A = OracleConvexSet(K.dim, K.radius, lvl, K.center)
        res = central_cut_ellipsoid(K_A, eps / 2, max_iter=cap, warm=warm, gamma=gamma,
                                    lower_bound=lvl.certify if early_exit else None)
        if isinstance(res, NearPoint):
            warm = (res.x, res.shape, res.logdet)
        return res

    while hi - lo >= eps1 / 2:
        mid = (lo + hi) / 2
        res = probe(mid)
        if isinstance(res, NearPoint):
            # res.x is gamma-near K, so the nearest point of K costs at most
            # f(res.x) + L gamma: a certified upper endpoint
            hi = min(mid, max(lo, f.value(res.x) + f.lipschitz * gamma))
            found = res.x
        else:
            lo = mid
    res = probe(hi)
    if isinstance(res, NearPoint):
        return res.x
    if found is not None:
        return found
    raise Infeasible("no point found at the top of the value interval")
