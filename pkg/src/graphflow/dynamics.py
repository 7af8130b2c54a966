"""Upwind gradient-flow flux, ODE right-hand side, and adaptive integration.

For each species with descent velocity w = -beta * (nonlocal gradient of the
energy's variational derivative), the flux on the ordered edge (l, k) is

    j(l, k) = m(rho_l, rho_k) (w_+)^(q-1) - m(rho_k, rho_l) (w_-)^(q-1),

i.e. the mobility is evaluated at the source vertex of the flow and enters
to the first power.  This is the unique flux for which the Finsler pairing
identity l_rho(j)[.] = -dE[.] and the exact dissipation balance
dE/dt = -D(rho) hold for every exponent p; the resulting trajectories are
curves of maximal slope (zeros of the De Giorgi functional).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import StepSizeUnderflow, ThresholdExceeded
from .graph import nonlocal_divergence
from .kernels import edge_velocities, energy
from .mobility import negative_part, positive_part

STATE_TOL = 1e-8  # slack accepted on raw states before ThresholdExceeded
GUARD_TOL = 1e-12  # simplex guard on accepted integrator steps


@dataclass
class SpeciesPairState:
    """Per-vertex densities of the two species with respect to mu."""

    rho: np.ndarray  # (2, n)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim != 2 or rho.shape[0] != 2:
            raise ValueError(f"state must have shape (2, n), got {rho.shape}")
        self.rho = rho

    @classmethod
    def from_densities(cls, rho1, rho2):
        return cls(np.stack([np.asarray(rho1, dtype=float), np.asarray(rho2, dtype=float)]))

    @property
    def rho1(self):
        return self.rho[0]

    @property
    def rho2(self):
        return self.rho[1]

    def masses(self, graph):
        return self.rho @ graph.weights

    def validate(self, graph, mobility=None, masses=(1.0, 1.0), tol=1e-9):
        if self.rho.shape[1] != graph.n_vertices:
            raise ValueError(
                f"state has {self.rho.shape[1]} vertices, graph has {graph.n_vertices}"
            )
        if np.min(self.rho) < -tol:
            raise ThresholdExceeded(f"negative density {np.min(self.rho):.3e}")
        got = self.masses(graph)
        drift = np.abs(got - np.asarray(masses, dtype=float))
        if np.max(drift) > max(tol, 1e-9):
            raise ValueError(f"species masses {got} differ from target {masses}")
        if mobility is not None and mobility.bounded:
            cap = mobility.threshold_cap
            if np.max(self.rho) > cap + tol:
                raise ThresholdExceeded(
                    f"density {np.max(self.rho):.6g} exceeds mobility threshold {cap}"
                )
        return self


def _clip_to_box(rho, mobility):
    hi = mobility.threshold_cap
    return np.clip(rho, 0.0, hi if np.isfinite(hi) else None)


def upwind_flux(rho_pair, kernels, mobility, exponents, graph, velocities=None):
    """Gradient-flow flux pair (2, n_edges); antisymmetric by construction.

    Raises ThresholdExceeded when the state leaves [0, R] x [0, S] (or goes
    negative) by more than a small slack; inside the slack the mobility
    arguments are clamped to the box.
    """
    rho_pair = np.asarray(rho_pair, dtype=float)
    lo = float(np.min(rho_pair))
    hi = float(np.max(rho_pair))
    cap = mobility.threshold_cap
    if lo < -STATE_TOL or (np.isfinite(cap) and hi > cap + STATE_TOL):
        raise ThresholdExceeded(
            f"state outside [0, {cap}] by more than {STATE_TOL}: min={lo:.3e} max={hi:.3e}"
        )
    if velocities is None:
        velocities = edge_velocities(rho_pair, kernels, graph)
    qm1 = exponents.q - 1.0
    rho_box = _clip_to_box(rho_pair, mobility)
    flux = np.empty((2, graph.n_edges))
    for i in range(2):
        w = kernels.beta[i] * velocities[i]
        m_fwd = mobility(rho_box[i][graph.edge_src], rho_box[i][graph.edge_dst])
        m_bwd = mobility(rho_box[i][graph.edge_dst], rho_box[i][graph.edge_src])
        flux[i] = m_fwd * positive_part(w) ** qm1 - m_bwd * negative_part(w) ** qm1
    return flux


def rhs(rho_pair, kernels, mobility, exponents, graph):
    """Density time derivative -div(j) per species; conserves mass exactly."""
    flux = upwind_flux(rho_pair, kernels, mobility, exponents, graph)
    return np.stack([-nonlocal_divergence(flux[i], graph) for i in range(2)])


def _flux_and_rhs(rho_pair, kernels, mobility, exponents, graph):
    flux = upwind_flux(rho_pair, kernels, mobility, exponents, graph)
    deriv = np.stack([-nonlocal_divergence(flux[i], graph) for i in range(2)])
    return flux, deriv


@dataclass
class IntegratorOptions:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_dt: float = np.inf
    dt_initial: float = None
    dt_min: float = 1e-14
    guard_tol: float = GUARD_TOL


@dataclass
class Trajectory:
    """Accepted states of one integration run with per-interval fluxes.

    ``fluxes[k]`` is the gradient-flow flux evaluated at ``states[k]`` (the
    left endpoint of interval k).  Diagnostics recompute node fluxes from
    states where needed; for these trajectories the two agree by definition.
    """

    times: np.ndarray  # (m+1,)
    states: np.ndarray  # (m+1, 2, n)
    fluxes: np.ndarray  # (m, 2, e)
    energies: np.ndarray  # (m+1,)
    dts: np.ndarray  # (m,)
    local_errors: np.ndarray  # (m,)
    stats: dict = field(default_factory=dict)
    node_fluxes: np.ndarray = None  # (m+1, 2, e), flux law evaluated per node

    @property
    def n_steps(self):
        return len(self.dts)

    def state_at(self, k):
        return SpeciesPairState(self.states[k])


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def integrate(state0, t_final, kernels, mobility, exponents, graph, options=None):
    """Adaptive Dormand-Prince 5(4) integration on the invariant simplex.

    A step is rejected (and dt halved) when any density would leave
    [-guard_tol, threshold + guard_tol]; accepted states are clamped into the
    box and renormalized in mass, with both amounts accumulated in the run
    statistics.  Evaluation failures at wild trial states count as rejections.
    """
    options = options or IntegratorOptions()
    state0 = state0 if isinstance(state0, SpeciesPairState) else SpeciesPairState(state0)
    masses0 = state0.masses(graph)
    state0.validate(graph, mobility, masses=masses0)
    cap = mobility.threshold_cap

    y = state0.rho.copy()
    t = 0.0
    dt = options.dt_initial or min(options.max_dt, max(t_final / 100.0, 1e-6), t_final)

    times = [0.0]
    states = [y.copy()]
    energies = [energy(y, kernels, graph)]
    fluxes, dts, errors = [], [], []
    min_density = float(np.min(y))
    max_density = float(np.max(y))
    clamp_total = 0.0
    renorm_total = 0.0
    accepted = rejected = 0

    flux0, k1 = _flux_and_rhs(y, kernels, mobility, exponents, graph)
    rejects_in_a_row = 0
    while t < t_final - 1e-14:
        dt = min(dt, options.max_dt, t_final - t)
        if dt < options.dt_min or rejects_in_a_row > 60:
            raise StepSizeUnderflow(
                f"dt underflow at t={t:.6g}", state=SpeciesPairState(y.copy()), time=t
            )
        stages = [k1]
        try:
            for row in range(1, 7):
                trial = y + dt * sum(
                    a * k for a, k in zip(_DP_A[row], stages)
                )
                if row < 6:
                    stages.append(rhs(trial, kernels, mobility, exponents, graph))
                else:
                    y5 = trial  # row 6 coefficients equal the 5th-order weights
                    stages.append(rhs(y5, kernels, mobility, exponents, graph))
        except (ThresholdExceeded, FloatingPointError):
            dt *= 0.5
            rejected += 1
            rejects_in_a_row += 1
            continue

        err_vec = dt * sum((b5 - b4) * k for b5, b4, k in zip(_DP_B5, _DP_B4, stages))
        scale = options.abs_tol + options.rel_tol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))

        wild = not (np.all(np.isfinite(y5)) and np.isfinite(err))
        lo = float(np.min(y5)) if not wild else 0.0
        hi = float(np.max(y5)) if not wild else 0.0
        guard_bad = wild or lo < -options.guard_tol or (
            np.isfinite(cap) and hi > cap + options.guard_tol
        )
        if err > 1.0 or guard_bad:
            rejected += 1
            rejects_in_a_row += 1
            dt = 0.5 * dt if guard_bad else dt * min(1.0, max(0.2, 0.9 * err ** (-0.2)))
            continue
        rejects_in_a_row = 0

        min_density = min(min_density, lo)
        max_density = max(max_density, hi)
        y_new = np.clip(y5, 0.0, cap if np.isfinite(cap) else None)
        clamp_total += float(np.sum(np.abs(y_new - y5) * graph.weights[None, :]))
        new_masses = y_new @ graph.weights
        factors = masses0 / new_masses
        renorm_total += float(np.sum(np.abs(factors - 1.0) * masses0))
        y_new = y_new * factors[:, None]

        fluxes.append(flux0)
        dts.append(dt)
        errors.append(err)
        t += dt
        y = y_new
        times.append(t)
        states.append(y.copy())
        energies.append(energy(y, kernels, graph))
        accepted += 1
        flux0, k1 = _flux_and_rhs(y, kernels, mobility, exponents, graph)
        dt = dt * min(5.0, max(0.2, 0.9 * err ** (-0.2))) if err > 0 else dt * 5.0

    final_masses = y @ graph.weights
    stats = {
        "accepted_steps": accepted,
        "rejected_steps": rejected,
        "min_density": min_density,
        "max_density": max_density,
        "clamped_mass": clamp_total,
        "renormalized_mass": renorm_total,
        "mass_drift": float(np.max(np.abs(final_masses - masses0))),
        "target_masses": masses0.tolist(),
    }
    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        fluxes=np.asarray(fluxes),
        energies=np.asarray(energies),
        dts=np.asarray(dts),
        local_errors=np.asarray(errors),
        stats=stats,
        node_fluxes=np.asarray(fluxes + [flux0]),
    )
