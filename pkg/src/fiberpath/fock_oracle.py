"""Exact reference computations on a truncated Fock space.

For a finite mode set the fiber Hamiltonian

    H(P) = (1/2) (P - P_f - e A(0))^2 + H_f

acts on the bosonic Fock space over the transverse one-particle space.  This
module builds the matrix of H(P) on the total-occupation-truncated space
(occupations summing to at most ``n_max``), squaring the shifted momentum
AFTER truncation so the result is exactly symmetric, and exposes spectra,
semigroup matrix elements, and ground-state expectations for cross-validation
of the Monte Carlo estimators.

Conventions (must match the path side):

* Modes come in +k/-k pairs (traveling waves).  Each mode carries two real
  transverse polarization vectors from the axis-cross frame, so P_f is
  diagonal in the occupation basis and the field coupling is real symmetric.
* The coupling field is A_mu(0) = sum_modes sqrt(w/(2 omega)) phi_hat
  e_mu(k, j) (a_kj + a*_kj); its vacuum covariance reproduces the pair kernel
  at coincident arguments.
* Smeared fields A(f) for Weyl expectations use the test function alone (no
  form factor), matching the field-side covariance q0.
"""

from __future__ import annotations

from math import comb

import numpy as np

from .field_model import FormFactor, ModeSet, TestFunction
from .polarization import basis_axis_cross

__all__ = [
    "FockBasis",
    "FockModel",
    "positivity_check",
]


def _mode_frames(mode_set: ModeSet, axis=(0.0, 0.0, 1.0)):
    """Real transverse frames per mode; falls back to the x axis for k || z."""
    frames = np.empty((mode_set.n_modes, 2, mode_set.d))
    for m, k in enumerate(mode_set.ks):
        try:
            frames[m] = basis_axis_cross(k, axis=axis)
        except ValueError:
            frames[m] = basis_axis_cross(k, axis=(1.0, 0.0, 0.0))
    return frames


class FockBasis:
    """Occupation-number basis with total occupation at most ``n_max``.

    Oscillators are ordered (mode 0, pol 0), (mode 0, pol 1), (mode 1, pol 0),
    ... and occupation tuples are enumerated lexicographically, so the vacuum
    is index 0.  The dimension C(K + n_max, K) is capped to keep dense linear
    algebra tractable.
    """

    def __init__(self, mode_set: ModeSet, n_max: int, dim_cap: int = 5000):
        if n_max < 1:
            raise ValueError("n_max must be at least 1")
        n_osc = 2 * mode_set.n_modes
        dim = comb(n_osc + n_max, n_osc)
        if dim > dim_cap:
            raise ValueError(
                f"truncated dimension {dim} exceeds the cap {dim_cap}; "
                "reduce n_max or the number of modes"
            )
        self.mode_set = mode_set
        self.n_max = n_max
        self.n_oscillators = n_osc
        self.dim = dim
        occ = np.zeros((dim, n_osc), dtype=np.int64)
        state = [0] * n_osc
        row = 0

        def fill(slot, budget):
            nonlocal row
            if slot == n_osc:
                occ[row] = state
                row += 1
                return
            for n in range(budget + 1):
                state[slot] = n
                fill(slot + 1, budget - n)
            state[slot] = 0

        fill(0, n_max)
        self.occupations = occ
        self.index = {tuple(o): i for i, o in enumerate(occ)}

    def lowering(self, q):
        """Dense matrix of the annihilation operator of oscillator ``q``."""
        a = np.zeros((self.dim, self.dim))
        occ = self.occupations
        for i in range(self.dim):
            n_q = occ[i, q]
            if n_q > 0:
                target = occ[i].copy()
                target[q] -= 1
                a[self.index[tuple(target)], i] = np.sqrt(n_q)
        return a


class FockModel:
    """Fiber Hamiltonian and observables on a truncated Fock space."""

    def __init__(self, mode_set: ModeSet, form_factor: FormFactor, n_max: int,
                 dim_cap: int = 5000, frame_axis=(0.0, 0.0, 1.0)):
        self.basis = FockBasis(mode_set, n_max, dim_cap)
        self.mode_set = mode_set
        self.form_factor = form_factor
        self.phi = form_factor.at_modes(mode_set)
        self.frames = _mode_frames(mode_set, axis=frame_axis)
        occ = self.basis.occupations
        # per-oscillator data, ordered as in FockBasis
        osc_modes = np.repeat(np.arange(mode_set.n_modes), 2)
        self.osc_modes = osc_modes
        self.osc_pols = np.tile(np.arange(2), mode_set.n_modes)
        omega = mode_set.omegas[osc_modes]
        self.number_diag = occ.sum(axis=1)
        self.field_energy_diag = occ @ omega
        self.momentum_diag = occ @ mode_set.ks[osc_modes]  # (dim, d)
        self._lowerings = [self.basis.lowering(q) for q in range(self.basis.n_oscillators)]
        # coupling field A_mu(0), one dense symmetric matrix per component
        self.field_matrices = np.zeros((mode_set.d, self.basis.dim, self.basis.dim))
        for q in range(self.basis.n_oscillators):
            m = osc_modes[q]
            j = self.osc_pols[q]
            c = np.sqrt(mode_set.weights[m] / (2.0 * mode_set.omegas[m])) * self.phi[m]
            x_q = self._lowerings[q] + self._lowerings[q].T
            for mu in range(mode_set.d):
                self.field_matrices[mu] += c * self.frames[m, j, mu] * x_q
        self._eig_cache: dict = {}

    # -- operator builders -------------------------------------------------

    def kinetic(self, P, e):
        """(1/2) sum_mu (P_mu - P_f_mu - e A_mu)^2, squared after truncation."""
        P = np.asarray(P, dtype=float)
        dim = self.basis.dim
        out = np.zeros((dim, dim))
        for mu in range(self.mode_set.d):
            shift = np.diag(P[mu] - self.momentum_diag[:, mu])
            m_mu = shift - e * self.field_matrices[mu]
            out += 0.5 * (m_mu @ m_mu)
        return 0.5 * (out + out.T)

    def hamiltonian(self, P, e):
        h = self.kinetic(P, e)
        h[np.diag_indices_from(h)] += self.field_energy_diag
        return h

    def smeared_field(self, f: TestFunction):
        """Self-adjoint smeared field Phi(f) for Weyl expectations.

        Phi(f) = sum_modes sqrt(w/2) [(e_j(k) . f_hat(k)) a*_kj + h.c.]; each
        mode couples to its dimensionless coordinate (a + a*)/sqrt(2), so the
        vacuum variance of Phi(f) is exactly the equal-time covariance
        q0(f, f) used by the path-side couplings (no 1/omega here -- the
        frequency enters only through time decay).
        """
        if f.values.shape != (self.mode_set.n_modes, self.mode_set.d):
            raise ValueError("test function does not match the mode set")
        dim = self.basis.dim
        out = np.zeros((dim, dim), dtype=complex)
        for q in range(self.basis.n_oscillators):
            m = self.osc_modes[q]
            j = self.osc_pols[q]
            c = np.sqrt(self.mode_set.weights[m] / 2.0)
            amp = complex(self.frames[m, j] @ f.values[m])
            out += c * (amp * self._lowerings[q].T + np.conj(amp) * self._lowerings[q])
        if np.max(np.abs(out.imag)) == 0.0:
            return out.real
        return out

    def annihilator(self, f: TestFunction):
        """a(f) = sum sqrt(w) (conj f_hat . e_j) a_mj, for the relative bound."""
        if f.values.shape != (self.mode_set.n_modes, self.mode_set.d):
            raise ValueError("test function does not match the mode set")
        dim = self.basis.dim
        out = np.zeros((dim, dim), dtype=complex)
        for q in range(self.basis.n_oscillators):
            m = self.osc_modes[q]
            j = self.osc_pols[q]
            amp = np.conj(complex(self.frames[m, j] @ f.values[m]))
            out += np.sqrt(self.mode_set.weights[m]) * amp * self._lowerings[q]
        return out

    def relative_bound_constant(self, f: TestFunction):
        """sqrt(sum_m (w/omega) |proj f_hat|^2): a(f) bound vs H_f^(1/2)."""
        total = 0.0
        for m in range(self.mode_set.n_modes):
            amps = self.frames[m] @ f.values[m]
            total += (
                self.mode_set.weights[m]
                / self.mode_set.omegas[m]
                * float(np.sum(np.abs(amps) ** 2))
            )
        return float(np.sqrt(total))

    # -- spectra and expectations ------------------------------------------

    def _eig(self, P, e):
        key = (tuple(np.asarray(P, dtype=float)), float(e))
        if key not in self._eig_cache:
            if len(self._eig_cache) >= 4:
                self._eig_cache.pop(next(iter(self._eig_cache)))
            evals, evecs = np.linalg.eigh(self.hamiltonian(P, e))
            self._eig_cache[key] = (evals, evecs)
        return self._eig_cache[key]

    def spectrum(self, P, e):
        return np.linalg.eigvalsh(self.hamiltonian(P, e))

    def ground(self, P, e, degeneracy_rtol=1e-9):
        """Ground energy, eigenvector, multiplicity, and spectral gap."""
        evals, evecs = self._eig(P, e)
        spread = max(evals[-1] - evals[0], 1.0)
        tol = degeneracy_rtol * spread
        multiplicity = int(np.sum(evals <= evals[0] + tol))
        gap = float(evals[multiplicity] - evals[0]) if multiplicity < len(evals) else np.inf
        return {
            "energy": float(evals[0]),
            "vector": evecs[:, 0],
            "multiplicity": multiplicity,
            "gap": gap,
        }

    def ground_energy(self, P, e):
        return float(self.spectrum(P, e)[0])

    def vacuum_semigroup(self, P, e, t):
        """(vacuum, exp(-t H(P)) vacuum) -- the finite-t partition value."""
        evals, evecs = self._eig(P, e)
        amps = evecs[0, :]
        return float(np.sum(amps * amps * np.exp(-t * (evals - evals[0])))
                     * np.exp(-t * evals[0]))

    def _evolved_vacuum(self, P, e, t):
        evals, evecs = self._eig(P, e)
        # exp(-tH)|vac>, with the overall scale exp(-t E0) pulled out for
        # numerical headroom (it cancels in every ratio)
        return evecs @ (np.exp(-t * (evals - evals[0])) * evecs[0, :])

    def exp_number_expectation(self, beta, P, e, t=None):
        """<exp(-beta N)>: ground state if t is None, else the finite-t ratio
        (vac, e^{-tH} e^{-beta N} e^{-tH} vac) / (vac, e^{-2tH} vac)."""
        damp = np.exp(-beta * self.number_diag)
        if t is None:
            psi = self.ground(P, e)["vector"]
            return float(psi @ (damp * psi))
        v = self._evolved_vacuum(P, e, t)
        return float(v @ (damp * v)) / float(v @ v)

    def weyl_expectation(self, f: TestFunction, P, e, t=None):
        """<exp(i A(f))>: ground state if t is None, else the finite-t ratio."""
        a_f = self.smeared_field(f)
        mu, u = np.linalg.eigh(a_f)
        if t is None:
            psi = self.ground(P, e)["vector"].astype(complex)
        else:
            psi = self._evolved_vacuum(P, e, t).astype(complex)
        w = np.conj(u.T) @ psi
        value = complex(np.conj(w) @ (np.exp(1j * mu) * w)) / complex(np.conj(psi) @ psi)
        return value

    def energy_curves(self, momenta, e_squares):
        """Ground energies over a (P, e^2) grid, shape (len(P), len(e^2))."""
        out = np.empty((len(momenta), len(e_squares)))
        for i, P in enumerate(momenta):
            for j, e2 in enumerate(e_squares):
                out[i, j] = self.ground_energy(P, np.sqrt(e2))
        return out

    def relative_bound_check(self, n_trials, seed, tol=1e-10):
        """Random-trial check of ||a(f) psi|| <= c(f) ||H_f^(1/2) psi||.

        The inequality is exact on the truncated space (the annihilator maps
        it into itself), so the expected violation count is zero.
        """
        rng = np.random.default_rng(seed)
        sqrt_hf = np.sqrt(self.field_energy_diag)
        violations = 0
        worst = -np.inf
        for _ in range(n_trials):
            raw = rng.standard_normal((self.mode_set.n_pairs, self.mode_set.d, 2))
            pair_values = raw[..., 0] + 1j * raw[..., 1]
            f = TestFunction.from_pair_values(self.mode_set, pair_values)
            psi = rng.standard_normal(self.basis.dim) + 1j * rng.standard_normal(self.basis.dim)
            psi /= np.linalg.norm(psi)
            lhs = float(np.linalg.norm(self.annihilator(f) @ psi))
            rhs = self.relative_bound_constant(f) * float(np.linalg.norm(sqrt_hf * psi))
            gap = lhs - rhs
            worst = max(worst, gap)
            if gap > tol:
                violations += 1
        return {"violations": violations, "worst_excess": worst, "n_trials": n_trials}


# ---------------------------------------------------------------------------
# positivity witness for the conjugated semigroup (single-mode reduction)
# ---------------------------------------------------------------------------


def _hermite_functions(q, n_levels):
    """Orthonormal Hermite functions psi_0..psi_{n_levels-1} on the grid q."""
    q = np.asarray(q, dtype=float)
    psi = np.empty((n_levels, q.size))
    psi[0] = np.pi ** -0.25 * np.exp(-0.5 * q * q)
    if n_levels > 1:
        psi[1] = np.sqrt(2.0) * q * psi[0]
    for n in range(1, n_levels - 1):
        psi[n + 1] = np.sqrt(2.0 / (n + 1)) * q * psi[n] - np.sqrt(n / (n + 1.0)) * psi[n - 1]
    return psi


def _conjugated_kernel(t, omega, lam, n_levels, psi):
    """Grid kernel of Theta exp(-tH) Theta^{-1}, H = omega n + (lam/omega) q^2.

    Theta = diag(i^n) turns the position-type quadratic perturbation into a
    momentum-type one; parity of the perturbation (it changes n by 0 or +-2)
    makes the conjugated kernel exactly real.
    """
    n = np.arange(n_levels)
    q_mat = np.zeros((n_levels, n_levels))
    root = np.sqrt((n[:-1] + 1) / 2.0)
    q_mat[n[:-1], n[:-1] + 1] = root
    q_mat[n[:-1] + 1, n[:-1]] = root
    h = np.diag(omega * n) + (lam / omega) * (q_mat @ q_mat)
    evals, evecs = np.linalg.eigh(h)
    semi = evecs @ (np.exp(-t * evals)[:, None] * evecs.T)
    theta = 1j ** n
    core = (theta[:, None] * np.conj(theta)[None, :]) * semi
    return psi.T @ core @ psi


def positivity_check(t, e, grid_size=64, n_max=14, omega=1.0, weight=1.0,
                     phi=1.0, q_half_width=2.0):
    """Pointwise positivity of the conjugated oscillator semigroup kernel.

    Reduces the positivity statement to one field direction: H = omega n_hat
    + lam X^2 with lam = e^2 w phi^2 / (2 omega), conjugated by i^n_hat.  At
    e = 0 the kernel is the Mehler kernel (closed form available for tests);
    the check evaluates the kernel on a symmetric grid and reports the
    minimum real part, the largest imaginary part, and a truncation estimate
    (the change when two levels are removed).

    ``passed`` requires a positive minimum and imaginary parts at the
    rounding level; ``strict`` additionally requires the minimum to clear the
    truncation estimate by a factor of ten.  The window must be narrow
    enough that the smallest true kernel value stays above the truncation
    tail, otherwise the witness cannot resolve the sign.
    """
    if n_max < 4 or n_max % 2 != 0:
        raise ValueError("n_max must be an even integer >= 4 (parity of the tail)")
    lam = 0.5 * e * e * weight * phi * phi / omega
    q = np.linspace(-q_half_width, q_half_width, grid_size)
    psi = _hermite_functions(q, n_max + 1)
    kernel = _conjugated_kernel(t, omega, lam, n_max + 1, psi)
    smaller = _conjugated_kernel(t, omega, lam, n_max - 1, psi[: n_max - 1])
    tail = float(np.max(np.abs(kernel - smaller)))
    min_real = float(np.min(kernel.real))
    max_imag = float(np.max(np.abs(kernel.imag)))
    passed = bool(min_real > 0.0 and max_imag <= 1e-8)
    return {
        "min_real": min_real,
        "max_imag": max_imag,
        "tail_estimate": tail,
        "passed": passed,
        "strict": bool(passed and min_real > 10.0 * tail),
        "grid": q,
        "kernel": kernel,
        "lam": lam,
        "t": t,
        "e": e,
    }
