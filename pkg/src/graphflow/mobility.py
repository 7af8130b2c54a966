"""Concave mobility functions, their recession limits, and the flux cost density.

A mobility ``m(r, s)`` weights how easily mass leaves a vertex with density
``r`` toward a vertex with density ``s``; upwind admissibility means
``m(0, s) = 0`` so empty vertices emit nothing.  The convex cost density

    alpha(j, r, s) = (j_+)^p / m(r, s)^(p-1)

uses the conventions 0/0 = 0 and a/0 = +inf for a != 0 and is +inf outside
the threshold box [0, R] x [0, S].  Infinity is a value here, never an error;
NaN is always a bug.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NonConvergent,
    NotApplicable,
    NotConcave,
    NotPositive,
    NotUpwindAdmissible,
)
from .expressions import compile_expression

_RICHARDSON_LAMBDAS = (2.0**10, 2.0**12, 2.0**14)
_RICHARDSON_RTOL = 1e-6


@dataclass(frozen=True)
class Mobility:
    """A concave mobility with thresholds and an optional closed-form recession.

    ``fn`` must be vectorized over numpy arrays.  ``R`` and ``S`` are the
    right-open thresholds of the domain [0, R) x [0, S); at finite thresholds
    the function is evaluated by its boundary limit value.  ``grad_fn``, when
    given, returns the pair of partial derivatives (dm/dr, dm/ds); solvers
    fall back to central differences otherwise.
    """

    name: str
    fn: object
    R: float = np.inf
    S: float = np.inf
    recession_fn: object = None
    grad_fn: object = None
    params: dict = field(default_factory=dict)

    def __call__(self, r, s):
        return np.asarray(self.fn(np.asarray(r, dtype=float), np.asarray(s, dtype=float)), dtype=float)

    @property
    def threshold_cap(self):
        """Largest density value admissible in either slot."""
        return min(self.R, self.S)

    @property
    def bounded(self):
        return np.isfinite(self.threshold_cap)


@dataclass(frozen=True)
class MobilityClass:
    """Support-condition flags; at least one true means condition (A) holds."""

    uniformly_sublinear: bool
    bounded_thresholds: bool
    vanishing_iff_source_zero: bool

    @property
    def condition_a(self):
        return self.uniformly_sublinear or self.bounded_thresholds or self.vanishing_iff_source_zero


@dataclass(frozen=True)
class MobilityValidation:
    mobility_name: str
    grid_size: int
    flags: MobilityClass
    max_concavity_violation: float
    min_interior_value: float


def linear():
    """m(r, s) = r, the Benamou-Brenier mobility; 1-homogeneous."""
    return Mobility(
        "linear",
        lambda r, s: r,
        recession_fn=lambda r, s: r,
        grad_fn=lambda r, s: (np.ones_like(r), np.zeros_like(r)),
    )


def volume_filling(cap=1.0):
    """m(r, s) = r (cap - s)/cap on [0, inf) x [0, cap): inflow saturates at cap."""
    cap = float(cap)
    if cap <= 0:
        raise ValueError("volume_filling cap must be positive")
    return Mobility(
        "volume_filling",
        lambda r, s: r * (cap - s) / cap,
        R=np.inf,
        S=cap,
        grad_fn=lambda r, s: ((cap - s) / cap, -r / cap),
        params={"cap": cap},
    )


def saturating():
    """m(r, s) = r/(1+r): uniformly sublinear growth, recession identically zero."""
    return Mobility(
        "saturating",
        lambda r, s: r / (1.0 + r),
        recession_fn=lambda r, s: np.zeros_like(np.asarray(r, dtype=float)),
        grad_fn=lambda r, s: (1.0 / (1.0 + r) ** 2, np.zeros_like(np.asarray(r, dtype=float))),
    )


def geometric():
    """m(r, s) = sqrt(rs): vanishes when the destination is empty.

    Violates every clause of condition (A); kept as a negative test case.
    """
    return Mobility("geometric", lambda r, s: np.sqrt(r * s), recession_fn=lambda r, s: np.sqrt(r * s))


PRESETS = {
    "linear": linear,
    "volume_filling": volume_filling,
    "saturating": saturating,
    "geometric": geometric,
}


def from_expression(text, R=np.inf, S=np.inf):
    """Build a mobility from an expression in the variables ``r`` and ``s``."""
    fn = compile_expression(text, ("r", "s"))
    return Mobility(f"expr:{text}", fn, R=float(R), S=float(S), params={"expression": text})


def positive_part(x):
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def negative_part(x):
    return np.maximum(-np.asarray(x, dtype=float), 0.0)


def signed_power(x, a):
    """sign(x) |x|^a, the odd power used to invert q-1 <-> p-1 relations."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** a


def alpha_density(j, r, s, mobility, exponents):
    """Upwind cost density (j_+)^p / m(r,s)^(p-1) as an extended real.

    Total on R^3 with values in [0, inf]: outside [0, R] x [0, S] the value
    is inf; 0/0 = 0 and a/0 = inf for a > 0.  Inputs broadcast.
    """
    j, r, s = np.broadcast_arrays(
        np.asarray(j, dtype=float), np.asarray(r, dtype=float), np.asarray(s, dtype=float)
    )
    p = exponents.p
    out = np.zeros(j.shape, dtype=float)
    outside = (r < 0) | (s < 0) | (r > mobility.R) | (s > mobility.S)
    jp = positive_part(j)
    inside = ~outside
    m_vals = np.zeros_like(out)
    if np.any(inside):
        m_vals[inside] = mobility(r[inside], s[inside])
    active = inside & (jp > 0)
    degenerate = active & (m_vals <= 0)
    regular = active & (m_vals > 0)
    out[regular] = jp[regular] ** p / m_vals[regular] ** (p - 1.0)
    out[degenerate] = np.inf
    out[outside] = np.inf
    if out.ndim == 0:
        return float(out)
    return out


def recession(mobility):
    """Large-density limit m_inf(r, s) = lim m(lr, ls)/l, for R = S = inf only.

    Uses the closed form when provided, otherwise Richardson extrapolation on
    the 1/lambda error model over lambda in {2^10, 2^12, 2^14}.  The result
    is positively 1-homogeneous by construction of the limit.
    """
    if mobility.bounded:
        raise NotApplicable(
            f"recession undefined for bounded thresholds (R={mobility.R}, S={mobility.S})"
        )
    if mobility.recession_fn is not None:
        rec = mobility.recession_fn
        return Mobility(f"{mobility.name}_recession", rec, recession_fn=rec, params=dict(mobility.params))

    lam = _RICHARDSON_LAMBDAS

    def numeric(r, s):
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        v = [mobility(l * r, l * s) / l for l in lam]
        # lambda quadruples between samples, so one Richardson step on the
        # c/lambda model is (4 v_next - v) / 3
        e1 = (4.0 * v[1] - v[0]) / 3.0
        e2 = (4.0 * v[2] - v[1]) / 3.0
        gap = np.max(np.abs(e1 - e2))
        scale = max(1.0, float(np.max(np.abs(e2))))
        if gap > _RICHARDSON_RTOL * scale:
            raise NonConvergent(
                f"recession extrapolations disagree by {gap:.3e} for {mobility.name}"
            )
        return e2

    return Mobility(f"{mobility.name}_recession", numeric, recession_fn=numeric, params=dict(mobility.params))


def is_uniformly_sublinear(mobility, n_samples=16, box=4.0, tol=1e-6):
    """True when the (numeric or closed-form) recession vanishes on samples."""
    if mobility.bounded:
        return False
    rec = recession(mobility)
    grid = np.linspace(0.0, box, n_samples)
    r, s = np.meshgrid(grid, grid)
    return bool(np.max(np.abs(rec(r.ravel(), s.ravel()))) <= tol)


def validate_mobility(mobility, grid_size=16, box=4.0):
    """Sampled admissibility / positivity / concavity checks plus class flags.

    Concavity is checked by midpoint inequalities along each variable
    separately on a grid over [0, R) x [0, S) (truncated at ``box`` for
    infinite thresholds).  This is a best-effort sampler, not a proof.

    Raises
    ------
    NotUpwindAdmissible, NotPositive, NotConcave
        With the witnessing sample in the message.
    """
    if grid_size < 8:
        raise ValueError("grid_size must be at least 8")
    r_hi = min(mobility.R, box) * (1.0 - 1e-9)
    s_hi = min(mobility.S, box) * (1.0 - 1e-9)
    r_grid = np.linspace(0.0, r_hi, grid_size)
    s_grid = np.linspace(0.0, s_hi, grid_size)

    at_zero = mobility(np.zeros_like(s_grid), s_grid)
    worst = int(np.argmax(np.abs(at_zero)))
    if np.max(np.abs(at_zero)) > 1e-12:
        raise NotUpwindAdmissible(
            f"m(0, {s_grid[worst]:.6g}) = {at_zero[worst]:.3e} != 0 for {mobility.name}"
        )

    rr, ss = np.meshgrid(r_grid[1:], s_grid[1:], indexing="ij")
    interior = mobility(rr.ravel(), ss.ravel())
    min_interior = float(np.min(interior))
    if min_interior <= 0:
        idx = int(np.argmin(interior))
        raise NotPositive(
            f"m({rr.ravel()[idx]:.6g}, {ss.ravel()[idx]:.6g}) = {interior[idx]:.3e} <= 0"
        )

    max_violation = 0.0
    witness = None
    # midpoint concavity along r for each fixed s, then along s for each fixed r
    for fixed_s in s_grid:
        a, b = np.meshgrid(r_grid, r_grid, indexing="ij")
        lhs = mobility(0.5 * (a + b).ravel(), np.full(a.size, fixed_s))
        rhs = 0.5 * (
            mobility(a.ravel(), np.full(a.size, fixed_s))
            + mobility(b.ravel(), np.full(a.size, fixed_s))
        )
        gap = rhs - lhs
        k = int(np.argmax(gap))
        if gap[k] > max_violation:
            max_violation = float(gap[k])
            witness = (a.ravel()[k], fixed_s, b.ravel()[k], fixed_s)
    for fixed_r in r_grid:
        a, b = np.meshgrid(s_grid, s_grid, indexing="ij")
        lhs = mobility(np.full(a.size, fixed_r), 0.5 * (a + b).ravel())
        rhs = 0.5 * (
            mobility(np.full(a.size, fixed_r), a.ravel())
            + mobility(np.full(a.size, fixed_r), b.ravel())
        )
        gap = rhs - lhs
        k = int(np.argmax(gap))
        if gap[k] > max_violation:
            max_violation = float(gap[k])
            witness = (fixed_r, a.ravel()[k], fixed_r, b.ravel()[k])
    if max_violation > 1e-10:
        raise NotConcave(
            f"midpoint concavity violated by {max_violation:.3e} between "
            f"({witness[0]:.6g}, {witness[1]:.6g}) and ({witness[2]:.6g}, {witness[3]:.6g})"
        )

    # m(r, s) = 0 iff r = 0: already know m(0, s) = 0; check m > 0 for r > 0
    # including the s = 0 boundary, where e.g. the geometric mean vanishes.
    edge_vals = mobility(r_grid[1:], np.zeros(grid_size - 1))
    vanishing_iff_source_zero = bool(np.all(edge_vals > 0)) and min_interior > 0

    try:
        sublinear = is_uniformly_sublinear(mobility, n_samples=grid_size, box=box)
    except (NotApplicable, NonConvergent):
        sublinear = False

    flags = MobilityClass(
        uniformly_sublinear=sublinear,
        bounded_thresholds=mobility.bounded,
        vanishing_iff_source_zero=vanishing_iff_source_zero,
    )
    return MobilityValidation(
        mobility_name=mobility.name,
        grid_size=grid_size,
        flags=flags,
        max_concavity_violation=max_violation,
        min_interior_value=min_interior,
    )
