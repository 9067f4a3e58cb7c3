"""Isaacs operators, the Pucci maximal operator and cutoff combinations.

Coefficients are stored as *fields*: callables ``(t, x) -> array`` whose
result has shape ``index + batch + trailing``. ``index`` is ``(|A|, |B|)`` for
coefficient tables and ``()`` for scalar fields such as mixture weights;
``batch`` is the broadcast shape of ``t`` and ``x[..., 0]``; ``trailing`` is
``(d, d)`` for diffusion, ``(d,)`` for drift and ``()`` otherwise.

The operator is

    H(u0, p, X, t, x) = max_a min_b [tr(a^{ab} X) + b^{ab}.p - c^{ab} u0 + f^{ab}]

where the bracket after ``tr`` may be replaced by a user hook.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    SymmetryError,
    UnsupportedFormError,
)

__all__ = [
    "Field",
    "ConstantField",
    "SamplerField",
    "TableField",
    "EllipticityBounds",
    "StructureConstants",
    "IsaacsCoefficients",
    "MixedIsaacs",
    "StructureReport",
    "pucci_max",
    "pucci_min",
    "isaacs_eval",
    "cutoff_upper",
    "cutoff_lower",
    "exp_transform",
    "exp_transform_data",
    "validate_structure",
    "gamma_of_kappa",
]


def _batch_shape(t, x):
    return np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])


class Field:
    """Base class. Subclasses implement ``_eval(t, x, batch)``."""

    autonomous = False

    def __init__(self, index_shape, trailing):
        self.index_shape = tuple(index_shape)
        self.trailing = tuple(trailing)

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        batch = _batch_shape(t, x)
        out = np.asarray(self._eval(t, x, batch), dtype=float)
        return np.broadcast_to(out, self.index_shape + batch + self.trailing)

    def _eval(self, t, x, batch):
        raise NotImplementedError


class ConstantField(Field):
    """A field that does not depend on ``(t, x)``."""

    autonomous = True

    def __init__(self, table, index_ndim=2):
        table = np.array(table, dtype=float)
        table.setflags(write=False)
        super().__init__(table.shape[:index_ndim], table.shape[index_ndim:])
        self.table = table

    def _eval(self, t, x, batch):
        shape = self.index_shape + (1,) * len(batch) + self.trailing
        return self.table.reshape(shape)


class SamplerField(Field):
    """Closed-form field; ``fn(t, x)`` must broadcast to ``index + batch + trailing``."""

    def __init__(self, fn, index_shape, trailing=(), autonomous=False):
        super().__init__(index_shape, trailing)
        self.fn = fn
        self.autonomous = autonomous

    def _eval(self, t, x, batch):
        return self.fn(t, x)


class TableField(Field):
    """Per-node table on a grid, looked up at the nearest node.

    ``table`` has shape ``index + grid.shape + trailing``; queries outside the
    box are clamped to the nearest edge node.
    """

    def __init__(self, grid, table, index_ndim=2):
        table = np.array(table, dtype=float)
        lead = table.shape[:index_ndim]
        if table.shape[index_ndim:index_ndim + 1 + grid.d] != grid.shape:
            raise ConfigurationError("table does not match the grid shape")
        super().__init__(lead, table.shape[index_ndim + 1 + grid.d:])
        table.setflags(write=False)
        self.grid = grid
        self.table = table
        # time-independent tables can be cached by the solver
        self.autonomous = bool(np.all(table == table[(slice(None),) * index_ndim + (slice(0, 1),)]))

    def _eval(self, t, x, batch):
        g = self.grid
        n = np.clip(np.rint(np.broadcast_to(t, batch) / g.tau), 0, g.nt).astype(int)
        idx = [n]
        for i in range(g.d):
            xi = np.broadcast_to(x[..., i], batch)
            idx.append(np.clip(np.rint((xi - g.lower[i]) / g.h), 0, g.space_shape[i] - 1).astype(int))
        lead = (slice(None),) * len(self.index_shape)
        return self.table[lead + tuple(idx)]


class _TransformedField(Field):
    """``scale(t) * base(t, x) + offset`` with a time-only scale."""

    def __init__(self, base, offset=0.0, rate=0.0):
        super().__init__(base.index_shape, base.trailing)
        self.base = base
        self.offset = float(offset)
        self.rate = float(rate)
        self.autonomous = base.autonomous and self.rate == 0.0

    def _eval(self, t, x, batch):
        val = self.base(t, x)
        if self.rate != 0.0:
            scale = np.exp(self.rate * np.broadcast_to(t, batch))
            val = val * scale.reshape((1,) * len(self.index_shape) + batch + (1,) * len(self.trailing))
        return val + self.offset


def _as_field(value):
    if isinstance(value, Field):
        return value
    return ConstantField(value)


@dataclass(frozen=True)
class EllipticityBounds:
    """``0 < delta_bar < delta <= 1``; the Pucci operator works at ``delta_bar``."""

    delta: float
    delta_bar: float | None = None

    def __post_init__(self):
        db = self.delta / 2 if self.delta_bar is None else self.delta_bar
        object.__setattr__(self, "delta_bar", float(db))
        if not (0 < self.delta <= 1):
            raise DomainError("delta must lie in (0, 1]", field="delta")
        if not (0 < db < self.delta):
            raise DomainError("delta_bar must lie in (0, delta)", field="delta_bar")


def gamma_of_kappa(kappa):
    """Hölder exponent of the diffusion coefficients matched to ``kappa``.

    ``(7 - 3 kappa) / (12 - 4 kappa)``, decreasing from 1/2 to 1/4 on (1, 2).
    """
    kappa = float(kappa)
    if not 1.0 < kappa < 2.0:
        raise DomainError(f"kappa={kappa} must lie in (1, 2)", field="kappa")
    return (7 - 3 * kappa) / (12 - 4 * kappa)


@dataclass(frozen=True)
class StructureConstants:
    """Constants of the structure conditions.

    ``omega`` is a table of ``(r, value)`` pairs defining a nondecreasing
    modulus with ``omega(0) = 0``; it is interpolated linearly.
    """

    K0: float = 1.0
    kappa: float = 1.2
    tau_mod: float = 0.5
    omega: tuple = ((0.0, 0.0), (1.0, 1.0))

    def __post_init__(self):
        if not self.K0 >= 0:
            raise DomainError("K0 must be nonnegative", field="K0")
        gamma_of_kappa(self.kappa)
        if not 0 < self.tau_mod < 1:
            raise DomainError("tau_mod must lie in (0, 1)", field="tau_mod")
        om = np.asarray(self.omega, dtype=float)
        if om.ndim != 2 or om.shape[1] != 2 or om.shape[0] < 2:
            raise DomainError("omega must be a table of (r, value) pairs", field="omega")
        if om[0, 0] != 0 or om[0, 1] != 0:
            raise DomainError("omega(0) must be 0", field="omega")
        if np.any(np.diff(om[:, 0]) <= 0) or np.any(np.diff(om[:, 1]) < 0):
            raise DomainError("omega must be nondecreasing on increasing nodes", field="omega")
        object.__setattr__(self, "omega", tuple(map(tuple, om.tolist())))

    @property
    def gamma(self):
        return gamma_of_kappa(self.kappa)

    def omega_at(self, r):
        om = np.asarray(self.omega)
        return np.interp(r, om[:, 0], om[:, 1], right=om[-1, 1])


def _check_symmetric(X):
    X = np.asarray(X, dtype=float)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise SymmetryError("expected square matrices")
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    if np.abs(X - np.swapaxes(X, -1, -2)).max(initial=0.0) > 1e-12 * scale:
        raise SymmetryError("matrix is not symmetric")
    return X


def pucci_max(X, delta_bar):
    """``sup tr(a X)`` over symmetric ``a`` with spectrum in ``[delta_bar, 1/delta_bar]``.

    Vectorized over leading axes of ``X``.
    """
    X = _check_symmetric(X)
    lam = np.linalg.eigvalsh(0.5 * (X + np.swapaxes(X, -1, -2)))
    pos = np.clip(lam, 0.0, None).sum(axis=-1)
    neg = np.clip(-lam, 0.0, None).sum(axis=-1)
    return pos / delta_bar - delta_bar * neg


def pucci_min(X, delta_bar):
    return -pucci_max(-np.asarray(X, dtype=float), delta_bar)


def cutoff_upper(hval, pval, K):
    """``max(H, P - K)``."""
    return np.maximum(hval, pval - K)


def cutoff_lower(hval, pnegval, K):
    """``min(H, -P(-X) + K)``; ``pnegval`` is ``P(-X)``."""
    return np.minimum(hval, -np.asarray(pnegval) + K)


class IsaacsCoefficients:
    """Finite family of linear operators indexed by ``(alpha, beta)``.

    Parameters
    ----------
    a : Field or array
        Diffusion, ``(nA, nB, d, d)`` when constant.
    b, c, f : Field or array, optional
        Drift ``(nA, nB, d)``, discount ``(nA, nB)`` and source ``(nA, nB)``.
        Missing entries are zero.
    K0 : float
        Bound on the drift and discount.
    Hbar : float or callable, optional
        Bound on ``|f|``; a callable ``(t, x) -> batch`` array is allowed.
        Defaults to ``sup|f|`` for constant sources.
    lower : callable, optional
        Generic hook ``(u0, p, t, x) -> (nA, nB) + batch`` replacing the
        affine lower-order part. Operators with a hook are not affine.
    """

    def __init__(self, a, b=None, c=None, f=None, K0=1.0, Hbar=None, lower=None):
        self.a = _as_field(a)
        nA, nB = self.a.index_shape
        if nA == 0 or nB == 0:
            raise ConfigurationError("index sets A and B must be nonempty")
        if len(self.a.trailing) != 2 or self.a.trailing[0] != self.a.trailing[1]:
            raise ConfigurationError("diffusion must have trailing shape (d, d)")
        d = self.a.trailing[0]
        self.b = _as_field(np.zeros((nA, nB, d)) if b is None else b)
        self.c = _as_field(np.zeros((nA, nB)) if c is None else c)
        self.f = _as_field(np.zeros((nA, nB)) if f is None else f)
        for name, fld, tr in (("b", self.b, (d,)), ("c", self.c, ()), ("f", self.f, ())):
            if fld.index_shape != (nA, nB) or fld.trailing != tr:
                raise ConfigurationError(f"field {name} has shape {fld.index_shape + fld.trailing}",
                                         field=name)
        self.K0 = float(K0)
        if Hbar is None:
            Hbar = float(np.abs(self.f.table).max()) if isinstance(self.f, ConstantField) else np.inf
        self.Hbar = Hbar
        self.lower = lower

    @property
    def d(self):
        return self.a.trailing[0]

    @property
    def index_shape(self):
        return self.a.index_shape

    @property
    def affine(self):
        return self.lower is None

    @property
    def autonomous(self):
        return all(fl.autonomous for fl in (self.a, self.b, self.c, self.f)) and self.lower is None

    def hbar_at(self, t, x):
        if callable(self.Hbar):
            return np.broadcast_to(self.Hbar(t, x), _batch_shape(t, x))
        return np.full(_batch_shape(t, x), float(self.Hbar))

    def sample(self, t, x):
        """Dictionary of ``a, b, c, f`` arrays at ``(t, x)``."""
        return {"a": self.a(t, x), "b": self.b(t, x), "c": self.c(t, x), "f": self.f(t, x)}

    def payoff(self, u0, p, X, t, x):
        """Bracket values per ``(alpha, beta)``, shape ``(nA, nB) + batch``."""
        u0, p, X, t, x = (np.asarray(v, dtype=float) for v in (u0, p, X, t, x))
        second = np.einsum("...ij,...ij->...", self.a(t, x), X)
        if self.lower is not None:
            low = np.asarray(self.lower(u0, p, t, x), dtype=float)
        else:
            low = np.einsum("...i,...i->...", self.b(t, x), p) - self.c(t, x) * u0 + self.f(t, x)
        return second + low

    def hamiltonian(self, u0, p, X, t, x):
        """``max_alpha min_beta`` of :meth:`payoff`; vectorized over the batch."""
        return self.payoff(u0, p, X, t, x).min(axis=1).max(axis=0)

    def branches(self):
        return [(None, self)]


class MixedIsaacs:
    """Convex combination ``sum_s w_s(t, x) H_s`` of Isaacs operators.

    This is the exact form of an operator whose lower-order part is piecewise
    constant in ``(t, x)`` after convolving the regime indicators with a
    kernel: the weights are then the mollified indicators.
    """

    def __init__(self, parts, weights):
        parts = tuple(parts)
        weights = tuple(weights)
        if not parts or len(parts) != len(weights):
            raise ConfigurationError("need one weight per part")
        if len({p.d for p in parts}) != 1:
            raise ConfigurationError("parts must share the dimension")
        self.parts = parts
        self.weights = weights

    @property
    def d(self):
        return self.parts[0].d

    @property
    def K0(self):
        return max(p.K0 for p in self.parts)

    @property
    def Hbar(self):
        return max(float(p.Hbar) if not callable(p.Hbar) else np.inf for p in self.parts)

    @property
    def affine(self):
        return all(p.affine for p in self.parts)

    @property
    def autonomous(self):
        return all(p.autonomous for p in self.parts) and all(
            getattr(w, "autonomous", False) for w in self.weights)

    def weight_values(self, t, x):
        batch = _batch_shape(t, x)
        return [np.broadcast_to(np.asarray(w(t, x), dtype=float), batch) for w in self.weights]

    def hamiltonian(self, u0, p, X, t, x):
        total = 0.0
        for w, part in zip(self.weight_values(t, x), self.parts):
            total = total + w * part.hamiltonian(u0, p, X, t, x)
        return total

    def branches(self):
        return list(zip(self.weights, self.parts))


def isaacs_eval(coeffs, jet, t, x):
    """Scalar value of the operator at a jet."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(coeffs.hamiltonian(jet.value, jet.grad, jet.hess, float(t), x))


def exp_transform(coeffs, c):
    """Coefficients of ``e^{ct} H(e^{-ct} u) - c u0``.

    Adds ``c`` to every discount coefficient and multiplies the source by
    ``e^{ct}``. If ``v`` solves the original problem with data ``g``, then
    ``e^{ct} v`` solves the transformed one with data ``e^{ct} g``.
    """
    c = float(c)
    if isinstance(coeffs, MixedIsaacs):
        return MixedIsaacs([exp_transform(p, c) for p in coeffs.parts], coeffs.weights)
    if not coeffs.affine:
        raise UnsupportedFormError("the exponential transform needs affine lower-order terms")
    if c == 0.0:
        return coeffs
    Hbar = coeffs.Hbar
    if callable(Hbar) or c > 0:
        base = Hbar

        def Hbar(t, x, base=base):
            bound = base(t, x) if callable(base) else base
            return np.exp(c * np.asarray(t)) * bound

    return IsaacsCoefficients(
        coeffs.a,
        coeffs.b,
        _TransformedField(coeffs.c, offset=c),
        _TransformedField(coeffs.f, rate=c),
        K0=coeffs.K0 + abs(c),
        Hbar=Hbar,
    )


def exp_transform_data(g, c):
    """Boundary data matching :func:`exp_transform`: ``(t, x) -> e^{ct} g(t, x)``."""
    c = float(c)

    def transformed(t, x):
        return np.exp(c * np.asarray(t, dtype=float)) * np.asarray(g(t, x), dtype=float)

    return transformed


@dataclass
class StructureReport:
    """Worst-case structure diagnostics over a sample set."""

    ellipticity_margin: float
    holder_quotient: float
    lipschitz: float
    drift_max: float
    discount_min: float
    discount_max: float
    bound_slack: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def as_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k != "violations"}
        out["violations"] = list(self.violations)
        out["passed"] = self.passed
        return out


def validate_structure(coeffs, t, x, y, probes, delta, gamma):
    """Check ellipticity, Hölder continuity of ``a`` and the lower-order bounds.

    Parameters
    ----------
    coeffs : IsaacsCoefficients or MixedIsaacs
    t : array, shape (m,)
    x, y : array, shape (m, d)
        Sample triples; the Hölder quotient compares ``a(t, x)`` with ``a(t, y)``
        in the Frobenius norm.
    probes : array, shape (k, d + 1)
        ``(u0, p)`` probes for the growth bound ``|b(u')| <= K0 |u'| + Hbar``.
    delta, gamma : float
        Ellipticity constant and Hölder exponent.
    """
    parts = coeffs.parts if isinstance(coeffs, MixedIsaacs) else (coeffs,)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    margin = np.inf
    holder = 0.0
    lip = 0.0
    drift = 0.0
    cmin, cmax = np.inf, -np.inf
    slack = np.inf
    violations = []
    for part in parts:
        K0 = part.K0
        ax = part.a(t, x)
        ay = part.a(t, y)
        for arr in (ax, ay):
            lam = np.linalg.eigvalsh(0.5 * (arr + np.swapaxes(arr, -1, -2)))
            margin = min(margin, float(np.min(np.minimum(lam[..., 0] - delta, 1 / delta - lam[..., -1]))))
        dist = np.linalg.norm(x - y, axis=-1)
        diff = np.linalg.norm(ax - ay, axis=(-2, -1))
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(dist > 0, diff / dist**gamma, 0.0)
        holder = max(holder, float(q.max(initial=0.0)))
        hb = part.hbar_at(t, x)
        if part.affine:
            b = part.b(t, x)
            c = part.c(t, x)
            f = part.f(t, x)
            lip = max(lip, float(np.sqrt((b**2).sum(-1) + c**2).max()))
            drift = max(drift, float(np.abs(b).max()))
            cmin = min(cmin, float(c.min()))
            cmax = max(cmax, float(c.max()))
            if np.any(np.abs(f) > hb + 1e-12):
                violations.append("source exceeds Hbar")
        u0 = probes[:, 0]
        p = probes[:, 1:]
        # growth bound over probes, evaluated at every sample point
        for k in range(probes.shape[0]):
            zeroX = np.zeros(np.shape(t) + (part.d, part.d))
            low = part.payoff(u0[k], p[k], zeroX, t, x) - np.einsum("...ij,...ij->...", part.a(t, x), zeroX)
            norm_u = float(np.linalg.norm(probes[k]))
            slack = min(slack, float(np.min(K0 * norm_u + hb - np.abs(low))))
        if not part.affine:
            # finite-difference Lipschitz estimate for hook operators
            for k in range(probes.shape[0]):
                for j in range(k + 1, probes.shape[0]):
                    zeroX = np.zeros(np.shape(t) + (part.d, part.d))
                    dv = np.abs(part.payoff(u0[k], p[k], zeroX, t, x) - part.payoff(u0[j], p[j], zeroX, t, x))
                    du = np.linalg.norm(probes[k] - probes[j])
                    if du > 0:
                        lip = max(lip, float(dv.max()) / du)
        if holder > K0 + 1e-12:
            violations.append(f"diffusion Hölder quotient {holder:.6g} exceeds K0={K0:g}")
        if drift > K0 + 1e-12:
            violations.append(f"drift {drift:.6g} exceeds K0={K0:g}")
        if cmax > K0 + 1e-12:
            violations.append(f"discount {cmax:.6g} exceeds K0={K0:g}")
    if margin < -1e-12:
        violations.append(f"ellipticity violated by {-margin:.6g}")
    if cmin < 0:
        violations.append("monotonicity: negative discount makes H increasing in u0")
    if slack < -1e-12:
        violations.append(f"growth bound violated by {-slack:.6g}")
    if cmin == np.inf:
        cmin = cmax = 0.0
    return StructureReport(margin, holder, lip, drift, cmin, cmax, slack, violations)
