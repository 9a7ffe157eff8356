"""Dispersion, form factors, mode sets, and the transverse pair kernel.

The massless dispersion is ``omega(k) = |k|`` throughout.  Two quadratures of
the field are supported:

* a discrete, +/- closed :class:`ModeSet` (every wavevector appears together
  with its negative, at equal weight), which feeds :class:`ModeSumKernel` and
  the exact Fock-space oracle; and
* the sharp-cutoff continuum in three dimensions, where the angular integrals
  reduce the pair kernel to two radial profiles (:class:`IsotropicKernel`),
  optionally tabulated on a uniform grid (:class:`KernelTable`).

The transverse pair kernel is

    W_ab(tau, x) = (1/2) * Sum_or_Int  dperp_ab(k) * (phi(k)^2 / omega(k))
                     * exp(-|tau| omega(k)) * cos(k . x)

with ``dperp`` the transverse projector.  On a +/- closed mode set the two
members of each pair are combined symmetrically, so evaluation is manifestly
real; in the continuum the same reduction gives

    W(tau, x) = A(tau, r) * I + B(tau, r) * xhat xhat^T,    r = |x|,
    A(tau, r) = (1/(4 pi^2)) Int_0^L dk k e^{-|tau| k} (j0(kr) - j1(kr)/(kr))
    B(tau, r) = (1/(4 pi^2)) Int_0^L dk k e^{-|tau| k} j2(kr)

for the sharp cutoff phi(k)^2 = (2 pi)^{-3} 1{|k| <= L}.  At the origin
``A(0,0) = L^2 / (12 pi^2)`` and ``B(0,0) = 0``.

Note on conventions: the kernel carries the *squared* form factor and decays
in the time *difference*; a first-glance reading of the underlying two-layer
covariance is prone to dropping the square, so both facts are pinned by tests
against independent quadratures.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre, spherical_jn

from .polarization import basis_axis_cross, transverse_projector

__all__ = [
    "FormFactor",
    "IsotropicKernel",
    "KernelTable",
    "ModeSet",
    "ModeSumKernel",
    "TestFunction",
    "eval_kernel",
    "field_covariance",
    "isotropic_covariance_radial",
    "ito_isometry_mean",
]

TABLE_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# form factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FormFactor:
    """Ultraviolet form factor phi-hat.

    ``kind`` is ``"sharp-cutoff"`` (phi = (2 pi)^{-d/2} inside |k| <= cutoff,
    zero outside) or ``"table"`` (explicit per-mode values aligned with a
    ModeSet).  Values are real; the kernel only ever uses phi^2.
    """

    kind: str
    cutoff: float | None = None
    values: np.ndarray | None = None
    d: int = 3

    def __post_init__(self):
        if self.kind == "sharp-cutoff":
            if self.cutoff is None or not (self.cutoff > 0):
                raise ValueError("sharp-cutoff form factor needs a positive cutoff")
        elif self.kind == "table":
            if self.values is None:
                raise ValueError("table form factor needs per-mode values")
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim != 1 or not np.all(np.isfinite(vals)):
                raise ValueError("table form factor values must be a finite 1-d array")
            object.__setattr__(self, "values", vals)
        else:
            raise ValueError(f"unknown form factor kind {self.kind!r}")

    @classmethod
    def sharp(cls, cutoff, d=3):
        return cls(kind="sharp-cutoff", cutoff=float(cutoff), d=d)

    @classmethod
    def table(cls, values):
        return cls(kind="table", values=np.asarray(values, dtype=float))

    def at_modes(self, mode_set: "ModeSet") -> np.ndarray:
        """Values of phi-hat on the modes of ``mode_set`` (one per mode)."""
        if self.kind == "table":
            if len(self.values) == mode_set.n_modes:
                return self.values.copy()
            if len(self.values) == mode_set.n_pairs:
                # per-pair values; phi is even so both members share the value
                return np.repeat(self.values, 2)
            raise ValueError(
                "table form factor length matches neither the modes nor the pairs"
            )
        radii = np.linalg.norm(mode_set.ks, axis=1)
        vals = np.where(radii <= self.cutoff, (2.0 * np.pi) ** (-self.d / 2.0), 0.0)
        return vals


# ---------------------------------------------------------------------------
# mode sets
# ---------------------------------------------------------------------------


class ModeSet:
    """Finite, +/- closed quadrature of momentum space.

    Modes are stored interleaved, ``[+k_1, -k_1, +k_2, -k_2, ...]``, with the
    two members of a pair carrying the same positive weight.  The interleaved
    layout is relied on for exact +/- pairing of covariance sums (adjacent
    terms are conjugates, so imaginary parts cancel in floating point, not
    just in expectation).
    """

    def __init__(self, ks, weights):
        ks = np.asarray(ks, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if ks.ndim != 2 or ks.shape[0] == 0:
            raise ValueError("ks must be a nonempty (M, d) array")
        if ks.shape[0] % 2 != 0:
            raise ValueError("a +/- closed mode set has an even number of modes")
        if weights.shape != (ks.shape[0],):
            raise ValueError("weights must have one entry per mode")
        if not np.all(weights > 0):
            raise ValueError("mode weights must be positive")
        norms = np.linalg.norm(ks, axis=1)
        if np.any(norms <= 0):
            raise ValueError("modes must have nonzero wavevectors (omega = |k| > 0)")
        if not np.array_equal(ks[1::2], -ks[0::2]):
            raise ValueError("modes must be interleaved as [+k, -k] pairs")
        if not np.array_equal(weights[1::2], weights[0::2]):
            raise ValueError("the two members of a +/- pair must share a weight")
        self.ks = ks
        self.weights = weights
        self.omegas = norms

    @classmethod
    def from_pairs(cls, pair_ks, pair_weights=None):
        """Build the +/- closure of representative wavevectors."""
        pair_ks = np.atleast_2d(np.asarray(pair_ks, dtype=float))
        n = pair_ks.shape[0]
        if pair_weights is None:
            pair_weights = np.ones(n)
        pair_weights = np.asarray(pair_weights, dtype=float)
        ks = np.empty((2 * n, pair_ks.shape[1]))
        ks[0::2] = pair_ks
        ks[1::2] = -pair_ks
        weights = np.repeat(pair_weights, 2)
        return cls(ks, weights)

    @property
    def d(self):
        return self.ks.shape[1]

    @property
    def n_modes(self):
        return self.ks.shape[0]

    @property
    def n_pairs(self):
        return self.ks.shape[0] // 2

    @property
    def pair_ks(self):
        return self.ks[0::2]

    @property
    def pair_weights(self):
        return self.weights[0::2]

    @property
    def pair_omegas(self):
        return self.omegas[0::2]

    def __eq__(self, other):
        return (
            isinstance(other, ModeSet)
            and np.array_equal(self.ks, other.ks)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):  # pragma: no cover - identity hashing is enough
        return id(self)


# ---------------------------------------------------------------------------
# test functions on a mode set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Vector-valued k-space test function sampled on a mode set.

    ``values[m, a]`` is the a-th Cartesian component at mode m.  Functions
    used inside Weyl couplings must be Hermitian-even, ``f(-k) = conj(f(k))``
    (i.e. real in position space, so the smeared field is self-adjoint);
    :meth:`from_pair_values` builds those by construction.
    """

    mode_set: ModeSet
    values: np.ndarray
    hermitian_even: bool = field(default=False, compare=False)

    __test__ = False  # "test function" in the smearing sense; hide from pytest

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.mode_set.n_modes, self.mode_set.d):
            raise ValueError(
                f"test function values must have shape (n_modes, d) = "
                f"({self.mode_set.n_modes}, {self.mode_set.d})"
            )
        object.__setattr__(self, "values", vals)
        even = bool(np.array_equal(vals[1::2], np.conj(vals[0::2])))
        object.__setattr__(self, "hermitian_even", even)

    @classmethod
    def from_pair_values(cls, mode_set, pair_values):
        """Hermitian-even function from one value per +/- pair (at +k)."""
        pair_values = np.atleast_2d(np.asarray(pair_values, dtype=complex))
        if pair_values.shape != (mode_set.n_pairs, mode_set.d):
            raise ValueError("pair_values must have shape (n_pairs, d)")
        vals = np.empty((mode_set.n_modes, mode_set.d), dtype=complex)
        vals[0::2] = pair_values
        vals[1::2] = np.conj(pair_values)
        return cls(mode_set, vals)


def field_covariance(mode_set, form_factor, f, g):
    """Equal-time Gaussian covariance of the free transverse field.

    Returns (1/2) * Sum_m w_m conj(f(k_m)) . dperp(k_m) . g(k_m), a complex
    scalar in general.  For Hermitian-even f and g the two members of each
    +/- pair contribute exact complex conjugates, so the imaginary part
    cancels identically (the pairing is done adjacently on purpose).

    ``form_factor`` is accepted for interface symmetry with the kernels but
    does not enter: the covariance of the *smeared* field carries the test
    functions only.  Pass ``None``.
    """
    if form_factor is not None:
        raise ValueError("field_covariance takes form_factor=None; fold phi into f, g")
    fv = f.values if isinstance(f, TestFunction) else np.asarray(f, dtype=complex)
    gv = g.values if isinstance(g, TestFunction) else np.asarray(g, dtype=complex)
    if fv.shape != (mode_set.n_modes, mode_set.d) or gv.shape != fv.shape:
        raise ValueError("f and g must be sampled on the modes as (n_modes, d)")
    terms = np.empty(mode_set.n_modes, dtype=complex)
    for m in range(mode_set.n_modes):
        P = transverse_projector(mode_set.ks[m])
        terms[m] = 0.5 * mode_set.weights[m] * (np.conj(fv[m]) @ P @ gv[m])
    paired = terms[0::2] + terms[1::2]
    return complex(np.sum(paired))


def isotropic_covariance_radial(f3, cutoff, n_quad=256):
    """Equal-time covariance of f = g = (0, 0, f3(|k|)) in the d=3 continuum.

    Reduces to (1/2) * (8 pi / 3) * Int_0^cutoff k^2 f3(k)^2 dk and is used as
    a desk-scale continuum cross-check of :func:`field_covariance`.
    """
    nodes, wts = roots_legendre(n_quad)
    k = 0.5 * cutoff * (nodes + 1.0)
    w = 0.5 * cutoff * wts
    vals = np.asarray(f3(k), dtype=float)
    return 0.5 * (8.0 * np.pi / 3.0) * float(np.sum(w * k**2 * vals**2))


# ---------------------------------------------------------------------------
# discrete pair kernel
# ---------------------------------------------------------------------------


class ModeSumKernel:
    """Transverse pair kernel W(tau, x) for a +/- closed mode set.

    Stores one coefficient per pair, ``c_p = w_p phi(k_p)^2 / omega_p``, and a
    transverse orthonormal frame per pair for the factorized quadratic forms
    used by the estimators (``dperp = sum_j eps_j eps_j^T``).
    """

    kind = "mode-sum"

    def __init__(self, mode_set: ModeSet, form_factor: FormFactor):
        self.mode_set = mode_set
        self.form_factor = form_factor
        phi = form_factor.at_modes(mode_set)
        if not np.array_equal(phi[1::2], phi[0::2]):
            raise ValueError("form factor must be even on a +/- closed mode set")
        self.pair_phi = phi[0::2]
        self.pair_ks = mode_set.pair_ks
        self.pair_omegas = mode_set.pair_omegas
        self.pair_coefs = mode_set.pair_weights * self.pair_phi**2 / self.pair_omegas
        frames = []
        for k in self.pair_ks:
            try:
                frames.append(basis_axis_cross(k))
            except ValueError:
                frames.append(basis_axis_cross(k, axis=(1.0, 0.0, 0.0)))
        self.pair_frames = np.stack(frames)  # (p, 2, 3)

    @property
    def d(self):
        return self.mode_set.d

    def evaluate(self, tau, x):
        """Kernel matrix W(tau, x), exactly symmetric and real."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"x must be a {self.d}-vector")
        out = np.zeros((self.d, self.d))
        for c, k, om in zip(self.pair_coefs, self.pair_ks, self.pair_omegas):
            out += c * np.exp(-abs(tau) * om) * np.cos(k @ x) * transverse_projector(k)
        return out

    def trace_at_zero(self):
        """trace W(0, 0) = (d - 1) * sum_p c_p."""
        return float((self.d - 1) * np.sum(self.pair_coefs))

    def scalar_at(self, x):
        """Scalar kernel C(x) = Sum_m w phi^2/omega cos(k.x), no projector,
        no time decay -- the quadratic-variation comparison kernel."""
        x = np.asarray(x, dtype=float)
        return float(np.sum(2.0 * self.pair_coefs * np.cos(self.pair_ks @ x)))

    def scalar_norm_sq(self):
        """|| phi / sqrt(omega) ||^2 = Sum_m w phi^2 / omega = C(0)."""
        return float(np.sum(2.0 * self.pair_coefs))


# ---------------------------------------------------------------------------
# continuum kernel (sharp cutoff, d = 3)
# ---------------------------------------------------------------------------


def _angular_factors(z):
    """(j0(z) - j1(z)/z, j2(z)) with the removable singularity handled.

    The first factor tends to 2/3 at z = 0; below the series threshold both
    factors are evaluated by their leading Taylor terms.
    """
    z = np.asarray(z, dtype=float)
    small = z < 1e-6
    zs = np.where(small, 1.0, z)  # safe argument for the generic branch
    ga = spherical_jn(0, zs) - spherical_jn(1, zs) / zs
    ga = np.where(small, 2.0 / 3.0 - (2.0 / 15.0) * z**2, ga)
    j2 = np.where(small, z**2 / 15.0, spherical_jn(2, zs))
    return ga, j2


def _radial_weights(tau, r, cutoff, n_quad):
    """A and B profiles by Gauss-Legendre quadrature, vectorized over a
    (tau-grid) x (r-grid) product.  Returns arrays of shape (n_tau, n_r)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    nodes, wts = roots_legendre(n_quad)
    k = 0.5 * cutoff * (nodes + 1.0)  # (Q,)
    w = 0.5 * cutoff * wts
    decay = np.exp(-np.abs(tau)[:, None] * k[None, :])  # (T, Q)
    z = k[None, :] * r[:, None]  # (R, Q)
    ga, j2 = _angular_factors(z)
    pref = 1.0 / (4.0 * np.pi**2)
    wa = w * k  # quadrature x integrand weight k
    A = pref * np.einsum("tq,rq->tr", decay, wa[None, :] * ga)
    B = pref * np.einsum("tq,rq->tr", decay, wa[None, :] * j2)
    return A, B


@dataclass
class KernelTable:
    """Uniform bilinear-interpolation table of the radial profiles A and B.

    The grid is uniform in tau (row) and r (column) starting at zero.  Lookups
    outside the tabulated rectangle raise: refusal to extrapolate is part of
    the contract.  Agreement with direct quadrature is enforced at relative
    1e-6 (with an absolute floor of 1e-6 times the tau = r = 0 kernel scale,
    since the oscillatory profiles cross zero where a pure relative tolerance
    is unattainable).
    """

    cutoff: float
    tau_step: float
    r_step: float
    A: np.ndarray  # (n_tau, n_r)
    B: np.ndarray
    d: int = 3

    @property
    def tau_max(self):
        return self.tau_step * (self.A.shape[0] - 1)

    @property
    def r_max(self):
        return self.r_step * (self.A.shape[1] - 1)

    def profiles(self, tau, r):
        """Bilinear-interpolated (A, B) at |tau|, r, elementwise on arrays."""
        tau = np.abs(np.asarray(tau, dtype=float))
        r = np.asarray(r, dtype=float)
        if np.any(tau > self.tau_max * (1 + 1e-12)) or np.any(r > self.r_max * (1 + 1e-12)):
            raise ValueError(
                f"lookup outside table domain (tau <= {self.tau_max}, r <= {self.r_max}); "
                "build a larger table instead of extrapolating"
            )
        if np.any(r < 0):
            raise ValueError("r must be nonnegative")
        ti = np.clip(tau / self.tau_step, 0.0, self.A.shape[0] - 1.0)
        ri = np.clip(r / self.r_step, 0.0, self.A.shape[1] - 1.0)
        t0 = np.minimum(np.floor(ti).astype(np.intp), self.A.shape[0] - 2)
        r0 = np.minimum(np.floor(ri).astype(np.intp), self.A.shape[1] - 2)
        ft = ti - t0
        fr = ri - r0
        out = []
        for tab in (self.A, self.B):
            v00 = tab[t0, r0]
            v01 = tab[t0, r0 + 1]
            v10 = tab[t0 + 1, r0]
            v11 = tab[t0 + 1, r0 + 1]
            out.append((1 - ft) * ((1 - fr) * v00 + fr * v01) + ft * ((1 - fr) * v10 + fr * v11))
        return out[0], out[1]

    def save(self, path):
        """Versioned cache file (npz with a header record)."""
        np.savez(
            path,
            format_version=np.array([TABLE_FORMAT_VERSION]),
            cutoff=np.array([self.cutoff]),
            d=np.array([self.d]),
            tau_step=np.array([self.tau_step]),
            r_step=np.array([self.r_step]),
            A=self.A,
            B=self.B,
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            version = int(data["format_version"][0])
            if version != TABLE_FORMAT_VERSION:
                raise ValueError(
                    f"kernel table format version {version} not supported "
                    f"(expected {TABLE_FORMAT_VERSION})"
                )
            return cls(
                cutoff=float(data["cutoff"][0]),
                tau_step=float(data["tau_step"][0]),
                r_step=float(data["r_step"][0]),
                A=data["A"].copy(),
                B=data["B"].copy(),
                d=int(data["d"][0]),
            )


class IsotropicKernel:
    """Sharp-cutoff continuum pair kernel in d = 3, radial-profile form.

    ``evaluate`` uses direct quadrature unless a table is attached, in which
    case lookups interpolate bilinearly (and refuse to extrapolate).
    """

    kind = "isotropic"
    d = 3

    def __init__(self, cutoff, table: KernelTable | None = None, n_quad=None):
        if not cutoff > 0:
            raise ValueError("cutoff must be positive")
        self.cutoff = float(cutoff)
        if table is not None and abs(table.cutoff - self.cutoff) > 1e-12 * self.cutoff:
            raise ValueError("table was built for a different cutoff")
        self.table = table
        self._n_quad = n_quad

    # -- profiles ----------------------------------------------------------
    def _quad_order(self, r_max):
        if self._n_quad is not None:
            return self._n_quad
        # oscillation scale of j_l(k r) over k in [0, cutoff] is cutoff*r_max
        return int(max(96, 48 + 4 * self.cutoff * max(r_max, 1.0)))

    def profiles_direct(self, tau, r):
        """(A, B) by Gauss-Legendre quadrature over the product grid
        tau x r; scalars in, scalars out."""
        scalar = np.ndim(tau) == 0 and np.ndim(r) == 0
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        r_arr = np.atleast_1d(np.asarray(r, dtype=float))
        A, B = _radial_weights(tau_arr, r_arr, self.cutoff, self._quad_order(np.max(r_arr)))
        if scalar:
            return float(A[0, 0]), float(B[0, 0])
        return A, B

    def profiles(self, tau, r):
        """(A, B) elementwise on same-shape arrays.

        Uses the attached table when present; otherwise falls back to direct
        quadrature point by point (fine for spot checks, slow in bulk).
        """
        if self.table is not None:
            return self.table.profiles(tau, r)
        tau_arr = np.abs(np.asarray(tau, dtype=float))
        r_arr = np.asarray(r, dtype=float)
        if tau_arr.shape != r_arr.shape:
            raise ValueError("elementwise profiles need same-shape tau and r")
        flat_t = tau_arr.ravel()
        flat_r = r_arr.ravel()
        nodes, wts = roots_legendre(self._quad_order(np.max(flat_r) if flat_r.size else 1.0))
        k = 0.5 * self.cutoff * (nodes + 1.0)
        w = 0.5 * self.cutoff * wts * k / (4.0 * np.pi**2)
        A = np.empty(flat_t.shape)
        B = np.empty(flat_t.shape)
        for i in range(flat_t.size):
            ga, j2 = _angular_factors(k * flat_r[i])
            decay = np.exp(-flat_t[i] * k)
            A[i] = np.sum(w * decay * ga)
            B[i] = np.sum(w * decay * j2)
        return A.reshape(tau_arr.shape), B.reshape(tau_arr.shape)

    def evaluate(self, tau, x):
        """Kernel matrix W(tau, x) = A I + B xhat xhat^T."""
        x = np.asarray(x, dtype=float)
        if x.shape != (3,):
            raise ValueError("x must be a 3-vector")
        r = float(np.linalg.norm(x))
        if self.table is not None:
            A, B = self.table.profiles(np.array([abs(tau)]), np.array([r]))
            A, B = float(A[0]), float(B[0])
        else:
            A, B = self.profiles_direct(float(abs(tau)), r)
        out = A * np.eye(3)
        if r > 0:
            xhat = x / r
            out += B * np.outer(xhat, xhat)
        return out

    def trace_at_zero(self):
        """trace W(0,0) = cutoff^2 / (4 pi^2), exactly (closed form)."""
        return self.cutoff**2 / (4.0 * np.pi**2)

    def build_table(self, tau_max, r_max, tau_step=2e-3, r_step=2e-3):
        """Tabulate A and B on [0, tau_max] x [0, r_max] (uniform grids)."""
        n_tau = int(np.ceil(tau_max / tau_step)) + 1
        n_r = int(np.ceil(r_max / r_step)) + 1
        taus = tau_step * np.arange(n_tau)
        rs = r_step * np.arange(n_r)
        A, B = _radial_weights(taus, rs, self.cutoff, self._quad_order(rs[-1]))
        return KernelTable(cutoff=self.cutoff, tau_step=tau_step, r_step=r_step, A=A, B=B)

    def with_table(self, table):
        return IsotropicKernel(self.cutoff, table=table, n_quad=self._n_quad)

    # -- scalar (unprojected) kernel for the quadratic-variation bound ------
    def scalar_profile(self, r):
        """C(r) = (1/(2 pi^2)) (1 - cos(cutoff r)) / r^2, C(0) = cutoff^2/(4 pi^2)."""
        r = np.asarray(r, dtype=float)
        z = self.cutoff * r
        small = np.abs(z) < 1e-6
        with np.errstate(invalid="ignore", divide="ignore"):
            bulk = (1.0 - np.cos(z)) / np.where(small, 1.0, r**2)
        series = self.cutoff**2 * (0.5 - z**2 / 24.0)
        return (1.0 / (2.0 * np.pi**2)) * np.where(small, series, bulk)

    def scalar_norm_sq(self):
        """|| phi / sqrt(omega) ||^2 = cutoff^2 / (4 pi^2)."""
        return self.cutoff**2 / (4.0 * np.pi**2)


# ---------------------------------------------------------------------------
# module-level conveniences
# ---------------------------------------------------------------------------


def eval_kernel(kernel, tau, x):
    """Evaluate the transverse pair kernel W(tau, x) of either kind."""
    return kernel.evaluate(tau, x)


def ito_isometry_mean(kernel, t):
    """Expected value of the realized double form over [0, t]^2.

    Off-diagonal terms of the double stochastic sum vanish in expectation by
    the martingale property of the increments, and the diagonal contributes
    t * trace W(0, 0) exactly, at every step count.
    """
    if not t >= 0:
        raise ValueError("t must be nonnegative")
    return float(t) * kernel.trace_at_zero()
