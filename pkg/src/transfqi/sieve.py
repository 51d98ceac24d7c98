"""B-spline sieve basis on [-1, 1]^d and the block state-action feature map."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, DomainError, ValidationError

DOMAIN_TOL = 1e-12


def squash_state(x_raw):
    """Componentwise tanh, mapping R^d into (-1, 1)^d."""
    return np.tanh(np.asarray(x_raw, dtype=float))


def clamped_uniform_knots(knots_per_dim, degree, lo=-1.0, hi=1.0):
    breaks = np.linspace(lo, hi, knots_per_dim)
    return np.r_[np.full(degree, lo), breaks, np.full(degree, hi)]


def bspline_family(x, knots, degree):
    """All B-splines of a knot vector at points ``x`` by Cox-de Boor recursion.

    Returns an array [len(x), len(knots) - degree - 1]. Intervals are half
    open except the last non-degenerate one, which includes the right end so
    that the family stays a partition of unity at x = hi.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    t = np.asarray(knots, dtype=float)
    n0 = len(t) - 1
    B = ((t[:-1] <= x[:, None]) & (x[:, None] < t[1:])).astype(float)
    last = np.flatnonzero(t[1:] > t[:-1])[-1]
    B[x == t[last + 1], last] = 1.0
    for k in range(1, degree + 1):
        n = n0 - k
        left_den = t[k:k + n] - t[:n]
        right_den = t[k + 1:k + 1 + n] - t[1:1 + n]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (x[:, None] - t[:n]) / left_den, 0.0)
            right = np.where(right_den > 0, (t[k + 1:k + 1 + n] - x[:, None]) / right_den, 0.0)
        B = left * B[:, :n] + right * B[:, 1:n + 1]
    return B


@dataclass(frozen=True)
class BSplineBasis:
    """Per-dimension clamped uniform B-splines combined additively or as a tensor product.

    ``knots_per_dim`` counts breakpoints (endpoints included), so each
    dimension carries ``b = knots_per_dim + degree - 1`` functions. Additive
    mode drops the first function of every family (each family sums to one,
    so keeping all of them next to the constant column would make the design
    rank deficient) and appends one constant column: p = d * (b - 1) + 1.
    Tensor mode uses all b^d products.
    """

    dim: int
    degree: int = 3
    knots_per_dim: int = 4
    mode: str = "additive"

    def __post_init__(self):
        if self.dim < 1 or self.degree < 0 or self.knots_per_dim < 2:
            raise ValidationError("need dim >= 1, degree >= 0, knots_per_dim >= 2")
        if self.mode not in ("additive", "tensor"):
            raise ValidationError("mode must be 'additive' or 'tensor'")

    @property
    def n_per_dim(self):
        return self.knots_per_dim + self.degree - 1

    @property
    def p(self):
        b = self.n_per_dim
        return self.dim * (b - 1) + 1 if self.mode == "additive" else b ** self.dim

    @cached_property
    def knots(self):
        return clamped_uniform_knots(self.knots_per_dim, self.degree)

    def families(self, X):
        """Per-dimension basis values, list of d arrays [n, b]."""
        X = _as_points(X, self.dim)
        return [bspline_family(X[:, j], self.knots, self.degree) for j in range(self.dim)]

    def to_dict(self):
        return {"degree": self.degree, "knots_per_dim": self.knots_per_dim, "mode": self.mode}


def _as_points(X, dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise DimensionError("expected %d state coordinates, got shape %s" % (dim, X.shape))
    if X.size and (not np.all(np.isfinite(X)) or np.max(np.abs(X)) > 1.0 + DOMAIN_TOL):
        raise DomainError("state coordinates must lie in [-1, 1]; apply squash_state first")
    return np.clip(X, -1.0, 1.0)


def eval_phi(basis, x):
    """Basis vector phi(x) of length p; a 2-D input [n, d] gives [n, p]."""
    single = np.ndim(x) == 1
    fams = basis.families(x)
    n = fams[0].shape[0]
    if basis.mode == "additive":
        out = np.hstack([f[:, 1:] for f in fams] + [np.ones((n, 1))])
    else:
        out = fams[0]
        for f in fams[1:]:
            out = (out[:, :, None] * f[:, None, :]).reshape(n, -1)
    return out[0] if single else out


@dataclass(frozen=True)
class FeatureMap:
    """xi(x, a) = [phi(x) 1{a=0}, ..., phi(x) 1{a=m-1}]."""

    basis: BSplineBasis
    n_actions: int

    @property
    def p(self):
        return self.basis.p

    @property
    def dim(self):
        return self.n_actions * self.basis.p

    def _check_actions(self, a):
        a = np.asarray(a, dtype=np.int64)
        if a.size and (a.min() < 0 or a.max() >= self.n_actions):
            raise ValidationError("action index out of range [0, %d)" % self.n_actions)
        return a

    def design(self, states, actions):
        """Design matrix Z with rows xi(x_i, a_i), shape [n, m*p]."""
        phi = eval_phi(self.basis, np.asarray(states, dtype=float).reshape(-1, self.basis.dim))
        a = self._check_actions(actions).reshape(-1)
        n, p = phi.shape
        Z = np.zeros((n, self.n_actions, p))
        Z[np.arange(n), a] = phi
        return Z.reshape(n, -1)

    def q_values(self, beta, states, clip=None):
        """Q(x, a) for every action: [n, m]. ``clip`` is the bound to clip to, or None."""
        phi = eval_phi(self.basis, np.asarray(states, dtype=float).reshape(-1, self.basis.dim))
        q = phi @ np.asarray(beta, dtype=float).reshape(self.n_actions, self.p).T
        return q if clip is None else np.clip(q, -clip, clip)


def eval_xi(fmap, x, a):
    if not 0 <= int(a) < fmap.n_actions:
        raise ValidationError("action index out of range [0, %d)" % fmap.n_actions)
    return fmap.design(np.asarray(x, dtype=float).reshape(1, -1), [a])[0]


@dataclass(frozen=True, eq=False)
class QCoefficients:
    beta: np.ndarray
    vmax: float = np.inf

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise ValidationError("coefficients must be finite")
        if not self.vmax > 0:
            raise ValidationError("vmax must be positive")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    def __add__(self, other):
        return QCoefficients(self.beta + other.beta, self.vmax)

    def __sub__(self, other):
        return QCoefficients(self.beta - other.beta, self.vmax)

    def to_dict(self):
        return {"beta": self.beta.tolist(), "vmax": self.vmax}


def eval_q(fmap, coeffs, x, a, clip=True):
    value = float(eval_xi(fmap, x, a) @ coeffs.beta)
    if clip and np.isfinite(coeffs.vmax):
        value = min(max(value, -coeffs.vmax), coeffs.vmax)
    return value


def q_matrix(fmap, coeffs, states, clip=True):
    """Vectorised :func:`eval_q` over all actions, [n, m]."""
    return fmap.q_values(coeffs.beta, states, clip=coeffs.vmax if clip else None)


def greedy_actions(fmap, coeffs, states):
    """Greedy action per state; ties go to the lowest index."""
    return np.argmax(q_matrix(fmap, coeffs, states, clip=False), axis=1)
