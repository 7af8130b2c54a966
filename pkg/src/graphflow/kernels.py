"""Interaction kernels, the cross-interaction energy, and edge velocities.

The energy of a density pair is

    E(rho) = 1/2 sum_{i,k} sum_{l,h} K^(ik)(x_l, x_h) rho^(i)_l rho^(k)_h mu_l mu_h

with symmetric kernels K(x, y) = K(y, x).  The gradient-flow structure
requires the cross kernels to be positive multiples of each other; the
constructor accepts K12 = c * K21 and stores the symmetrized cross kernel
(K12 + K21)/2, which leaves the energy and both variational derivatives
unchanged for every choice of the species weights beta.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SemanticError, SizeMismatch
from .expressions import compile_expression
from .graph import nonlocal_gradient

_SYMMETRY_TOL = 1e-9


def _pairwise(fn, xs, ys):
    """Evaluate a kernel callable on all point pairs: (n, d) x (m, d) -> (n, m)."""
    return np.asarray(fn(xs[:, None, :], ys[None, :, :]), dtype=float)


@dataclass(frozen=True)
class KernelSet:
    """Four interaction kernels with species weights beta.

    ``k[i][k]`` are callables on broadcast point arrays returning the kernel
    value; cross kernels are stored in canonical symmetrized form.
    ``growth_constant`` is the sampled estimate of the constant in the
    p-growth bound (a lower estimate of the true constant).
    """

    k11: object
    k12: object
    k21: object
    k22: object
    beta: np.ndarray
    growth_constant: float = None
    growth_estimated: bool = True
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        object.__setattr__(self, "beta", beta)
        if beta.shape != (2,) or np.any(beta <= 0):
            raise SemanticError(f"beta must be two positive reals, got {beta}")

    def kernel(self, i, k):
        return ((self.k11, self.k12), (self.k21, self.k22))[i][k]

    def on_graph(self, graph):
        """Materialize the four kernel matrices on the graph's vertices (cached)."""
        key = id(graph)
        if key not in self._tables:
            xs = graph.points
            mats = np.stack(
                [
                    np.stack([_pairwise(self.kernel(i, k), xs, xs) for k in range(2)])
                    for i in range(2)
                ]
            )
            self._tables[key] = mats
        return self._tables[key]


def _check_symmetry(fn, name, rng, dim, box=2.0):
    xs = rng.uniform(-box, box, size=(24, dim))
    ys = rng.uniform(-box, box, size=(24, dim))
    a = np.asarray(fn(xs, ys), dtype=float)
    b = np.asarray(fn(ys, xs), dtype=float)
    scale = max(1.0, float(np.max(np.abs(a))))
    gap = float(np.max(np.abs(a - b)))
    if gap > _SYMMETRY_TOL * scale:
        raise SemanticError(f"kernel {name} violates K(x,y)=K(y,x) by {gap:.3e}")


def _cross_ratio(k12, k21, rng, dim, box=2.0):
    """Return c > 0 with K12 = c * K21 on samples, or raise SemanticError."""
    xs = rng.uniform(-box, box, size=(64, dim))
    ys = rng.uniform(-box, box, size=(64, dim))
    a = np.asarray(k12(xs, ys), dtype=float).ravel()
    b = np.asarray(k21(xs, ys), dtype=float).ravel()
    scale_a = float(np.max(np.abs(a)))
    scale_b = float(np.max(np.abs(b)))
    if scale_a < 1e-14 and scale_b < 1e-14:
        return 1.0
    if scale_a < 1e-14 or scale_b < 1e-14:
        raise SemanticError("one cross kernel vanishes while the other does not")
    mask = np.abs(b) > 1e-10 * scale_b
    ratios = a[mask] / b[mask]
    c = float(np.median(ratios))
    if c <= 0 or np.max(np.abs(a - c * b)) > 1e-8 * max(scale_a, 1.0):
        raise SemanticError(
            "cross kernels are not positive multiples of each other (K12 != c*K21)"
        )
    return c


def build_kernel_set(k11, k12, k21, k22, beta=(1.0, 1.0), dimension=1, validate=True,
                     growth_constant=None, exponents=None, seed=0):
    """Validate kernels and return the canonical :class:`KernelSet`.

    Symmetry K(x,y) = K(y,x) and the cross-proportionality K12 = c * K21 are
    checked on random samples; the cross kernels are then replaced by their
    average (K12 + K21)/2, which preserves the energy exactly.
    """
    rng = np.random.default_rng(seed)
    if validate:
        for fn, name in ((k11, "K11"), (k12, "K12"), (k21, "K21"), (k22, "K22")):
            _check_symmetry(fn, name, rng, dimension)
        _cross_ratio(k12, k21, rng, dimension)

    def cross(xs, ys, _a=k12, _b=k21):
        return 0.5 * (np.asarray(_a(xs, ys), dtype=float) + np.asarray(_b(xs, ys), dtype=float))

    kernels = KernelSet(k11=k11, k12=cross, k21=cross, k22=k22, beta=np.asarray(beta, dtype=float),
                        growth_constant=growth_constant, growth_estimated=growth_constant is None)
    if kernels.growth_constant is None and exponents is not None:
        est = estimate_growth_constant(kernels, dimension, exponents, seed=seed)
        object.__setattr__(kernels, "growth_constant", est)
    return kernels


def estimate_growth_constant(kernels, dimension, exponents, n_samples=400, box=2.0, seed=0):
    """Sampled lower estimate of L_K in |K(z) - K(z')| <= L_K (|z-z'| v |z-z'|^p)."""
    rng = np.random.default_rng(seed)
    p = exponents.p
    worst = 0.0
    for i in range(2):
        for k in range(2):
            fn = kernels.kernel(i, k)
            z0 = rng.uniform(-box, box, size=(n_samples, 2 * dimension))
            z1 = rng.uniform(-box, box, size=(n_samples, 2 * dimension))
            x0, y0 = z0[:, :dimension], z0[:, dimension:]
            x1, y1 = z1[:, :dimension], z1[:, dimension:]
            num = np.abs(
                np.asarray(fn(x0, y0), dtype=float) - np.asarray(fn(x1, y1), dtype=float)
            )
            dist = np.linalg.norm(z0 - z1, axis=1)
            den = np.maximum(dist, dist**p)
            good = den > 1e-9
            if np.any(good):
                worst = max(worst, float(np.max(num[good] / den[good])))
    return worst


# ---------------------------------------------------------------------------
# kernel presets
# ---------------------------------------------------------------------------

def _dist(xs, ys):
    return np.linalg.norm(xs - ys, axis=-1)


def distance():
    """K(x, y) = |x - y| (attractive for clustered mass)."""
    return lambda xs, ys: _dist(xs, ys)


def quadratic():
    """K(x, y) = |x - y|^2; legal under p-growth for p >= 2."""
    return lambda xs, ys: _dist(xs, ys) ** 2


def gaussian_well(sigma=1.0):
    """K(x, y) = -exp(-|x-y|^2 / sigma^2), a smooth attractive well."""
    sigma = float(sigma)
    return lambda xs, ys: -np.exp(-(_dist(xs, ys) ** 2) / sigma**2)


def morse_like(attract=1.0, ell_a=1.0, repulse=0.5, ell_r=0.5):
    """a exp(-|x-y|/l_a) - r exp(-|x-y|/l_r): short-range repulsion, long-range attraction."""
    return lambda xs, ys: attract * np.exp(-_dist(xs, ys) / ell_a) - repulse * np.exp(
        -_dist(xs, ys) / ell_r
    )


def zero():
    return lambda xs, ys: np.zeros(np.broadcast_shapes(xs.shape[:-1], ys.shape[:-1]))


KERNEL_PRESETS = {
    "distance": distance,
    "quadratic": quadratic,
    "gaussian_well": gaussian_well,
    "morse_like": morse_like,
    "zero": zero,
}


def kernel_from_expression(text):
    """Kernel from an expression in the edge length variable ``d`` = |x - y|."""
    fn = compile_expression(text, ("d",))
    return lambda xs, ys: fn(_dist(xs, ys))


# ---------------------------------------------------------------------------
# energy and its variational derivatives on a graph
# ---------------------------------------------------------------------------

def convolve_potential(kernel, rho, graph):
    """(K * rho)(x_l) = sum_h K(x_l, x_h) rho_h mu_h for one species density."""
    rho = graph.check_node_field(rho)
    if callable(kernel):
        mat = _pairwise(kernel, graph.points, graph.points)
    else:
        mat = np.asarray(kernel, dtype=float)
        if mat.shape != (graph.n_vertices, graph.n_vertices):
            raise SizeMismatch(f"kernel matrix shape {mat.shape}")
    return mat @ (rho * graph.weights)


def potentials(rho_pair, kernels, graph):
    """Variational derivatives (K^(i1) * rho1 + K^(i2) * rho2) per species, (2, n)."""
    rho_pair = np.asarray(rho_pair, dtype=float)
    mats = kernels.on_graph(graph)
    masses = rho_pair * graph.weights[None, :]
    return np.stack([mats[i, 0] @ masses[0] + mats[i, 1] @ masses[1] for i in range(2)])


def energy(rho_pair, kernels, graph):
    """Cross-interaction energy of the density pair."""
    rho_pair = np.asarray(rho_pair, dtype=float)
    phi = potentials(rho_pair, kernels, graph)
    masses = rho_pair * graph.weights[None, :]
    return 0.5 * float(np.sum(phi * masses))


def edge_velocity(rho_pair, kernels, graph, species):
    """Descent velocity -grad of the species' potential; exactly antisymmetric."""
    phi = potentials(rho_pair, kernels, graph)[species]
    return -nonlocal_gradient(phi, graph)


def edge_velocities(rho_pair, kernels, graph):
    """Both species' descent velocities stacked as (2, n_edges)."""
    phi = potentials(rho_pair, kernels, graph)
    return np.stack([-nonlocal_gradient(phi[i], graph) for i in range(2)])
