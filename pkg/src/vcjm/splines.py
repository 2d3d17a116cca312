"""B-spline and natural cubic spline bases, derivatives, and difference penalties.

All evaluation routines are pure functions of their arguments: identical
inputs give bit-identical outputs, so they are safe to share across chains
and worker processes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SplineDomainError(ValueError):
    """Raised when an evaluation point lies outside the basis domain."""


@dataclass(frozen=True)
class SplineSpec:
    """Clamped B-spline basis description.

    degree : polynomial degree (>= 0)
    interior_knots : strictly increasing knots inside the boundary interval
    boundary : (lo, hi) with lo < every interior knot < hi
    penalty_order : order r of the difference penalty on the coefficients;
        None marks an evaluation-only basis with no penalty attached

    The basis dimension is ``len(interior_knots) + degree + 1``.
    """

    degree: int
    interior_knots: tuple[float, ...]
    boundary: tuple[float, float]
    penalty_order: int | None = 2

    def __post_init__(self):
        if self.degree < 0 or int(self.degree) != self.degree:
            raise ValueError(f"degree must be a non-negative integer, got {self.degree}")
        lo, hi = self.boundary
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"boundary must satisfy lo < hi, got {self.boundary}")
        ik = np.asarray(self.interior_knots, dtype=float)
        if ik.size:
            if np.any(np.diff(ik) <= 0):
                raise ValueError("interior knots must be strictly increasing")
            if ik[0] <= lo or ik[-1] >= hi:
                raise ValueError("interior knots must lie strictly inside the boundary")
        if self.penalty_order is not None:
            if self.penalty_order < 1:
                raise ValueError("penalty_order must be >= 1")
            if self.penalty_order >= self.dim:
                raise ValueError(
                    f"penalty_order {self.penalty_order} must be smaller than the "
                    f"basis dimension {self.dim}"
                )
        object.__setattr__(self, "interior_knots", tuple(float(k) for k in ik))
        object.__setattr__(self, "boundary", (float(lo), float(hi)))

    @classmethod
    def equally_spaced(cls, degree, n_interior, boundary, penalty_order=2):
        """Spec with ``n_interior`` equally spaced knots on the closed boundary."""
        lo, hi = boundary
        interior = tuple(np.linspace(lo, hi, n_interior + 2)[1:-1]) if n_interior else ()
        return cls(degree=degree, interior_knots=interior, boundary=(lo, hi),
                   penalty_order=penalty_order)

    @property
    def dim(self):
        return len(self.interior_knots) + self.degree + 1

    def knot_vector(self):
        """Full clamped knot vector: boundary knots replicated degree+1 times."""
        lo, hi = self.boundary
        return np.concatenate([
            np.full(self.degree + 1, lo),
            np.asarray(self.interior_knots, dtype=float),
            np.full(self.degree + 1, hi),
        ])


@dataclass(frozen=True)
class PenaltyMatrix:
    """Symmetric positive definite penalty ``D_r' D_r + ridge * I``."""

    dim: int
    order: int
    ridge: float
    entries: np.ndarray = field(repr=False)

    def quad_form(self, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.entries @ x)


def difference_penalty(dim, order, ridge=1e-6):
    """Penalty matrix built from the ``order``-th difference matrix.

    The ridge term guarantees positive definiteness; its default value is an
    expert setting and should normally be left alone.
    """
    if not 1 <= order < dim:
        raise ValueError(f"need 1 <= order < dim, got order={order}, dim={dim}")
    d_r = np.diff(np.eye(dim), n=order, axis=0)
    entries = d_r.T @ d_r + ridge * np.eye(dim)
    return PenaltyMatrix(dim=dim, order=order, ridge=ridge, entries=entries)


def penalty_for(spec: SplineSpec, ridge=1e-6):
    if spec.penalty_order is None:
        raise ValueError("spline spec has no penalty order attached")
    return difference_penalty(spec.dim, spec.penalty_order, ridge=ridge)


def _intervals(knots, ts, n_basis):
    """Index k of the knot interval [knots[k], knots[k+1]) containing each t.

    The upper boundary maps into the last non-degenerate interval so the
    basis row at t = hi is the left limit instead of a zero row.
    """
    k = np.searchsorted(knots, ts, side="right") - 1
    return np.minimum(k, n_basis - 1)


def _basis_rows(knots, ts, k, degree):
    """Nonzero basis values at each t via the Cox-de Boor triangular recursion.

    Returns an array of shape (len(ts), degree+1); row i holds the values of
    the basis functions with indices k[i]-degree .. k[i].
    """
    npts = ts.shape[0]
    vals = np.zeros((npts, degree + 1))
    vals[:, 0] = 1.0
    left = np.empty((npts, degree))
    right = np.empty((npts, degree))
    for j in range(1, degree + 1):
        left[:, j - 1] = ts - knots[k + 1 - j]
        right[:, j - 1] = knots[k + j] - ts
        saved = np.zeros(npts)
        for r in range(j):
            denom = right[:, r] + left[:, j - 1 - r]
            tmp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r] * tmp
            saved = left[:, j - 1 - r] * tmp
        vals[:, j] = saved
    return vals


def _check_domain(spec, ts):
    lo, hi = spec.boundary
    bad = (ts < lo) | (ts > hi) | ~np.isfinite(ts)
    if np.any(bad):
        t_bad = ts[bad][0]
        raise SplineDomainError(
            f"evaluation point {t_bad} outside the basis domain [{lo}, {hi}]"
        )


def bspline_matrix(spec: SplineSpec, ts):
    """Basis matrix of shape (len(ts), spec.dim); rows sum to one."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    _check_domain(spec, ts)
    knots = spec.knot_vector()
    nb = spec.dim
    k = _intervals(knots, ts, nb)
    rows = _basis_rows(knots, ts, k, spec.degree)
    out = np.zeros((ts.shape[0], nb))
    cols = k[:, None] - spec.degree + np.arange(spec.degree + 1)[None, :]
    np.put_along_axis(out, cols, rows, axis=1)
    return out


def bspline_basis(spec: SplineSpec, t):
    """Basis vector at a single point."""
    return bspline_matrix(spec, [t])[0]


def bspline_deriv_matrix(spec: SplineSpec, ts):
    """First-derivative matrix of shape (len(ts), spec.dim); rows sum to zero."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    _check_domain(spec, ts)
    nb = spec.dim
    if spec.degree == 0:
        return np.zeros((ts.shape[0], nb))
    knots = spec.knot_vector()
    d = spec.degree
    k = _intervals(knots, ts, nb)
    low_rows = _basis_rows(knots, ts, k, d - 1)
    # Degree d-1 basis on the same knot vector has nb+1 functions; the
    # nonzero ones at t are k-(d-1) .. k.
    low = np.zeros((ts.shape[0], nb + 1))
    cols = k[:, None] - (d - 1) + np.arange(d)[None, :]
    np.put_along_axis(low, cols, low_rows, axis=1)
    span_a = knots[d:nb + d] - knots[:nb]
    span_b = knots[d + 1:nb + d + 1] - knots[1:nb + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        term_a = np.where(span_a > 0, low[:, :nb] / span_a, 0.0)
        term_b = np.where(span_b > 0, low[:, 1:nb + 1] / span_b, 0.0)
    return d * (term_a - term_b)


def bspline_deriv(spec: SplineSpec, t):
    return bspline_deriv_matrix(spec, [t])[0]


def _truncated_cubic(ts, knot):
    z = np.maximum(ts - knot, 0.0)
    return z * z * z


def _truncated_cubic_deriv(ts, knot):
    z = np.maximum(ts - knot, 0.0)
    return 3.0 * z * z


def natural_cubic_matrix(interior_knots, boundary, ts):
    """Natural cubic spline basis (no intercept column).

    With K interior knots the dimension is K + 1.  The basis is cubic between
    the boundary knots, has zero second derivative at and beyond them, and
    extrapolates linearly outside the boundary, so any real t is accepted.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    lo, hi = float(boundary[0]), float(boundary[1])
    if not lo < hi:
        raise ValueError(f"boundary must satisfy lo < hi, got {boundary}")
    knots = np.concatenate([[lo], np.asarray(interior_knots, dtype=float), [hi]])
    if np.any(np.diff(knots) <= 0):
        raise ValueError("interior knots must be strictly increasing inside the boundary")
    m = knots.shape[0]
    out = np.empty((ts.shape[0], m - 1))
    out[:, 0] = ts
    if m > 2:
        denom_last = knots[m - 1] - knots[m - 2]
        d_last = (_truncated_cubic(ts, knots[m - 2]) - _truncated_cubic(ts, knots[m - 1])) / denom_last
        for j in range(m - 2):
            denom = knots[m - 1] - knots[j]
            d_j = (_truncated_cubic(ts, knots[j]) - _truncated_cubic(ts, knots[m - 1])) / denom
            out[:, j + 1] = d_j - d_last
    return out


def natural_cubic_basis(interior_knots, boundary, t):
    return natural_cubic_matrix(interior_knots, boundary, [t])[0]


def natural_cubic_deriv_matrix(interior_knots, boundary, ts):
    """First derivative of ``natural_cubic_matrix`` (exact, not numeric)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    lo, hi = float(boundary[0]), float(boundary[1])
    knots = np.concatenate([[lo], np.asarray(interior_knots, dtype=float), [hi]])
    m = knots.shape[0]
    out = np.empty((ts.shape[0], m - 1))
    out[:, 0] = 1.0
    if m > 2:
        denom_last = knots[m - 1] - knots[m - 2]
        d_last = (_truncated_cubic_deriv(ts, knots[m - 2])
                  - _truncated_cubic_deriv(ts, knots[m - 1])) / denom_last
        for j in range(m - 2):
            denom = knots[m - 1] - knots[j]
            d_j = (_truncated_cubic_deriv(ts, knots[j])
                   - _truncated_cubic_deriv(ts, knots[m - 1])) / denom
            out[:, j + 1] = d_j - d_last
    return out


def natural_cubic_deriv(interior_knots, boundary, t):
    return natural_cubic_deriv_matrix(interior_knots, boundary, [t])[0]
