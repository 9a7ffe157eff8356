"""Discretized stochastic double integrals of the pair kernel along a path.

The basic object is the left-endpoint double sum

    q1(I1, I2) = Sum_{i in I1} Sum_{j in I2} Sum_{a,b}
                 db_a(i) db_b(j) W_ab(s_i - s_j, b(s_i) - b(s_j))

over increments whose left endpoints fall in the closed-open intervals I1 and
I2 (summation order: outer i, inner j, with the Cartesian indices contracted
pairwise at each (i, j)).  Two treatments of the true diagonal i = j are
supported:

* ``"realized-increments"`` keeps db_a(i) db_b(i) W_ab(0, 0);
* ``"deterministic-qv"`` (default) replaces it by its exact conditional mean
  dt * delta_ab W_ab(0, 0), i.e. dt * trace W(0,0) per step -- a variance
  reduction that leaves the expected value unchanged.

For a discrete mode-sum kernel the cosine of position differences factorizes,
cos(u_i - u_j) = c_i c_j + s_i s_j, so the double sum collapses to a few
matrix products against the shared time-decay matrix exp(-omega |s_i - s_j|);
that fast path is what the estimators batch over chunks of paths.  The
continuum kernel goes through pairwise radial-profile lookups instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field_model import IsotropicKernel, ModeSumKernel, TestFunction

__all__ = [
    "ActionConfig",
    "cross_double_integral",
    "full_action",
    "pair_double_integral",
    "quadratic_variation_form",
    "weyl_coupling",
]

_DIAGONAL_RULES = ("deterministic-qv", "realized-increments")


@dataclass(frozen=True)
class ActionConfig:
    """Coupling strength, kernel, and diagonal rule for the action."""

    kernel: object
    e: float = 0.0
    diagonal_rule: str = "deterministic-qv"

    def __post_init__(self):
        if self.diagonal_rule not in _DIAGONAL_RULES:
            raise ValueError(f"diagonal_rule must be one of {_DIAGONAL_RULES}")


def _check_rule(diagonal_rule):
    if diagonal_rule not in _DIAGONAL_RULES:
        raise ValueError(f"diagonal_rule must be one of {_DIAGONAL_RULES}")


# ---------------------------------------------------------------------------
# chunk-level block forms (mode-sum kernel)
# ---------------------------------------------------------------------------


def _decay_matrix(omega, times):
    return np.exp(-omega * np.abs(times[:, None] - times[None, :]))


def block_forms_mode_sum(increments, positions, kernel, boundaries, diagonal_rule, dt):
    """Block values S[., a, b] of the double sum for a chunk of paths.

    ``boundaries`` is an increasing index sequence 0 = m_0 < ... < m_J that
    partitions the increment range; the returned array has shape (B, J, J)
    with S[:, a, b] the double sum restricted to i in block a, j in block b.
    The diagonal rule acts inside the diagonal blocks only (where i = j pairs
    live).  Summing blocks reassembles any interval pairing exactly, which is
    what makes the bilinearity identities hold to rounding.
    """
    _check_rule(diagonal_rule)
    B, n, d = increments.shape
    boundaries = np.asarray(boundaries, dtype=np.intp)
    if boundaries[0] != 0 or boundaries[-1] > n or np.any(np.diff(boundaries) <= 0):
        raise ValueError("boundaries must increase from 0 and stay within the grid")
    nb = boundaries[-1]
    J = len(boundaries) - 1
    times = dt * np.arange(nb)
    blocks = [slice(int(boundaries[a]), int(boundaries[a + 1])) for a in range(J)]
    out = np.zeros((B, J, J))
    pos = positions[:, :nb, :]  # left endpoints
    inc = increments[:, :nb, :]
    for c_p, k_p, om_p, frame in zip(
        kernel.pair_coefs, kernel.pair_ks, kernel.pair_omegas, kernel.pair_frames
    ):
        E = _decay_matrix(om_p, times)
        u = pos @ k_p  # (B, nb)
        trig = (np.cos(u), np.sin(u))
        for eps in frame:
            y = inc @ eps  # (B, nb)
            contrib = np.zeros((B, J, J))
            for v in (trig[0] * y, trig[1] * y):
                for b, sl_b in enumerate(blocks):
                    t_b = v[:, sl_b] @ E[sl_b, :]  # (B, nb)
                    for a, sl_a in enumerate(blocks):
                        contrib[:, a, b] += np.einsum("bi,bi->b", v[:, sl_a], t_b[:, sl_a])
            if diagonal_rule == "deterministic-qv":
                for a, sl_a in enumerate(blocks):
                    realized = np.einsum("bi,bi->b", y[:, sl_a], y[:, sl_a])
                    contrib[:, a, a] += dt * (sl_a.stop - sl_a.start) - realized
            out += c_p * contrib
    return out


# ---------------------------------------------------------------------------
# chunk-level pairwise forms (continuum kernel)
# ---------------------------------------------------------------------------


def pairwise_form_isotropic(
    increments, positions, kernel, idx_a, idx_b, diagonal_rule, dt, sub_chunk=96
):
    """q1 between index ranges ``idx_a = (lo, hi)`` and ``idx_b`` for a chunk,
    using the radial-profile decomposition W = A I + B rhat rhat^T.

    Works in sub-chunks of paths to bound the (B', n_a, n_b) pairwise memory.
    """
    _check_rule(diagonal_rule)
    B = increments.shape[0]
    lo_a, hi_a = idx_a
    lo_b, hi_b = idx_b
    na, nb_ = hi_a - lo_a, hi_b - lo_b
    if na <= 0 or nb_ <= 0:
        return np.zeros(B)
    times_a = dt * np.arange(lo_a, hi_a)
    times_b = dt * np.arange(lo_b, hi_b)
    tau = np.abs(times_a[:, None] - times_b[None, :])
    out = np.empty(B)
    for start in range(0, B, sub_chunk):
        end = min(start + sub_chunk, B)
        pa = positions[start:end, lo_a:hi_a, :]
        pb = positions[start:end, lo_b:hi_b, :]
        da = increments[start:end, lo_a:hi_a, :]
        db = increments[start:end, lo_b:hi_b, :]
        sep = pa[:, :, None, :] - pb[:, None, :, :]  # (B', na, nb, 3)
        r = np.sqrt(np.einsum("bijk,bijk->bij", sep, sep))
        Av, Bv = kernel.profiles(np.broadcast_to(tau, r.shape), r)
        dot_inc = np.einsum("bik,bjk->bij", da, db)
        proj = np.einsum("bik,bijk->bij", da, sep) * np.einsum("bjk,bijk->bij", db, sep)
        with np.errstate(invalid="ignore", divide="ignore"):
            proj = np.where(r > 0, proj / np.where(r > 0, r**2, 1.0), 0.0)
        vals = np.einsum("bij->b", Av * dot_inc + Bv * proj)
        if diagonal_rule == "deterministic-qv":
            # replace realized i = j terms (overlap of the two ranges) by the
            # deterministic dt * trace W(0,0) per overlapping step
            lo, hi = max(lo_a, lo_b), min(hi_a, hi_b)
            if hi > lo:
                A0, _ = kernel.profiles(np.zeros(1), np.zeros(1))
                ov_a = slice(lo - lo_a, hi - lo_a)
                dd = increments[start:end, lo:hi, :]
                realized = float(A0[0]) * np.einsum("bik,bik->b", dd, dd)
                vals += dt * (hi - lo) * kernel.trace_at_zero() - realized
        out[start:end] = vals
    return out


def quadratic_variation_form(increments, positions, kernel, mu, sub_chunk=128):
    """Scalar-kernel double sum  Sum_ij db_mu(i) db_mu(j) C(|b_i - b_j|).

    The comparison object for the stochastic-integral norm bound: realized
    increments, single Cartesian component mu, no transverse projector and no
    time decay.  Returns one value per path.
    """
    B, n, _ = increments.shape
    out = np.empty(B)
    for start in range(0, B, sub_chunk):
        end = min(start + sub_chunk, B)
        pos = positions[start:end, :n, :]
        y = increments[start:end, :, mu]
        sep = pos[:, :, None, :] - pos[:, None, :, :]
        r = np.sqrt(np.einsum("bijk,bijk->bij", sep, sep))
        C = kernel.scalar_profile(r)
        out[start:end] = np.einsum("bi,bij,bj->b", y, C, y)
    return out


# ---------------------------------------------------------------------------
# weyl and point couplings (mode-sum kernel)
# ---------------------------------------------------------------------------


def _require_hermitian_even(f):
    if not isinstance(f, TestFunction):
        raise TypeError("expected a TestFunction sampled on the kernel's mode set")
    if not f.hermitian_even:
        raise ValueError(
            "Weyl couplings need Hermitian-even test functions, f(-k) = conj(f(k)) "
            "(a real field smearing); build one with TestFunction.from_pair_values"
        )


def weyl_couplings_chunk(increments, positions, kernel, f, t_index, dt, idx=None,
                         split=False):
    """Cross coupling between the path integral and a field insertion.

    Computes, per path, the left-endpoint discretization of

        Sum_i Sum_pairs (w phi / sqrt(omega)) exp(-|s_i - t| omega)
              * Re[ (db_i . dperp(k) f(k)) exp(-i k . (b(s_i) - b(t))) ]

    (the -k member of each pair contributes the complex conjugate, hence the
    real part), restricted to increments i in ``idx = (lo, hi)`` (default:
    all).  Real by construction.

    Under the path sign flip b -> -b the cosine branch (real part of the
    projected test function) is odd while the sine branch (imaginary part)
    is even; with ``split=True`` the two are returned separately as
    ``(odd, even)`` so antithetic folds can treat each with its own parity.
    """
    if not isinstance(kernel, ModeSumKernel):
        raise ValueError("Weyl couplings need a discrete mode-sum kernel (the test "
                         "function must be representable on the active quadrature)")
    _require_hermitian_even(f)
    if f.mode_set is not kernel.mode_set and f.mode_set != kernel.mode_set:
        raise ValueError("test function and kernel live on different mode sets")
    B, n, _ = increments.shape
    lo, hi = (0, n) if idx is None else idx
    times = dt * np.arange(lo, hi)
    t_ins = dt * t_index
    pos = positions[:, lo:hi, :]
    inc = increments[:, lo:hi, :]
    x_ins = positions[:, t_index, :]  # (B, 3)
    odd = np.zeros(B)
    even = np.zeros(B)
    f_pair = f.values[0::2]  # value at +k of each pair
    for p in range(kernel.pair_ks.shape[0]):
        k_p = kernel.pair_ks[p]
        om_p = kernel.pair_omegas[p]
        cw = kernel.mode_set.pair_weights[p] * kernel.pair_phi[p] / np.sqrt(om_p)
        fp = f_pair[p]
        g = fp - k_p * ((k_p @ fp) / (k_p @ k_p))  # dperp f at +k
        decay = np.exp(-om_p * np.abs(times - t_ins))  # (n_idx,)
        u = pos @ k_p - (x_ins @ k_p)[:, None]  # (B, n_idx)
        # per pair: Re[(db . dperp f) exp(-i k.(b_i - x_ins))] with the -k
        # partner supplying the conjugate -- hence cos Re + sin Im
        odd += cw * ((np.cos(u) * (inc @ np.real(g))) @ decay)
        if np.any(np.imag(g) != 0.0):
            even += cw * ((np.sin(u) * (inc @ np.imag(g))) @ decay)
    if split:
        return odd, even
    return odd + even


def point_coupling_chunk(positions, kernel, f_i, t_i_index, f_j, t_j_index, dt,
                         split=False):
    """First-layer covariance between two field insertions along the path:

        q1(point_i, point_j) = (1/2) Sum_m w_m conj(f_i) . dperp . f_j
                               * exp(-|t_i - t_j| omega_m)
                               * exp(i k_m . (x_i - x_j))

    evaluated per path at x = b(t).  Real for Hermitian-even insertions.

    Under b -> -b the Re z cos u branch is even and the Im z sin u branch is
    odd; ``split=True`` returns them separately as ``(even, odd)``.
    """
    _require_hermitian_even(f_i)
    _require_hermitian_even(f_j)
    B = positions.shape[0]
    xi = positions[:, t_i_index, :]
    xj = positions[:, t_j_index, :]
    tau = dt * abs(t_i_index - t_j_index)
    even = np.zeros(B)
    odd = np.zeros(B)
    fi_pair = f_i.values[0::2]
    fj_pair = f_j.values[0::2]
    for p in range(kernel.pair_ks.shape[0]):
        k_p = kernel.pair_ks[p]
        om_p = kernel.pair_omegas[p]
        w_p = kernel.mode_set.pair_weights[p]
        khat2 = k_p @ k_p
        fj_perp = fj_pair[p] - k_p * ((k_p @ fj_pair[p]) / khat2)
        z = np.vdot(fi_pair[p], fj_perp)  # conj(f_i) . dperp . f_j at +k
        u = (xi - xj) @ k_p  # (B,)
        # pair sum is Re[z exp(-i k.(x_i - x_j))] = Re z cos u + Im z sin u
        even += w_p * np.exp(-om_p * tau) * np.real(z) * np.cos(u)
        if np.imag(z) != 0.0:
            odd += w_p * np.exp(-om_p * tau) * np.imag(z) * np.sin(u)
    if split:
        return even, odd
    return even + odd


# ---------------------------------------------------------------------------
# per-path public operations
# ---------------------------------------------------------------------------


def _interval_indices(grid, interval):
    a, b = interval
    ia, ib = grid.index_of(a), grid.index_of(b)
    if ib <= ia:
        raise ValueError(f"empty interval {interval}")
    return ia, ib


def pair_double_integral(path, interval_a, interval_b, kernel, diagonal_rule="deterministic-qv"):
    """Double sum q1(I1, I2) for one path (see module docstring).

    Interval endpoints must lie on the grid.  The evaluation is symmetric
    under swapping the intervals by construction (arguments are canonically
    ordered before summing), and block-additive to rounding.
    """
    ia = _interval_indices(path.grid, interval_a)
    ib = _interval_indices(path.grid, interval_b)
    if ib < ia:
        ia, ib = ib, ia
    inc = path.increments[None, :, :]
    pos = path.positions[None, :, :]
    dt = path.grid.dt
    if isinstance(kernel, ModeSumKernel):
        cuts = sorted({0, ia[0], ia[1], ib[0], ib[1]})
        forms = block_forms_mode_sum(inc, pos, kernel, cuts, diagonal_rule, dt)[0]
        total = 0.0
        for a in range(len(cuts) - 1):
            for b in range(len(cuts) - 1):
                in_a = ia[0] <= cuts[a] and cuts[a + 1] <= ia[1]
                in_b = ib[0] <= cuts[b] and cuts[b + 1] <= ib[1]
                if in_a and in_b:
                    total += forms[a, b]
        return float(total)
    if isinstance(kernel, IsotropicKernel):
        return float(
            pairwise_form_isotropic(inc, pos, kernel, ia, ib, diagonal_rule, dt)[0]
        )
    raise TypeError(f"unsupported kernel type {type(kernel).__name__}")


def full_action(path, horizon, config: ActionConfig):
    """(e^2 / 2) * q1([0, T], [0, T]) along the path."""
    return (
        0.5
        * config.e**2
        * pair_double_integral(
            path, (0.0, horizon), (0.0, horizon), config.kernel, config.diagonal_rule
        )
    )


def cross_double_integral(path, t, kernel, diagonal_rule="deterministic-qv"):
    """Off-diagonal block q1([0, t], [t, 2t]) (no diagonal terms involved)."""
    return pair_double_integral(path, (0.0, t), (t, 2.0 * t), kernel, diagonal_rule)


def weyl_coupling(path, f, t, kernel):
    """Cross coupling of the full path horizon with an insertion at time t."""
    t_index = path.grid.index_of(t)
    return float(
        weyl_couplings_chunk(
            path.increments[None, :, :],
            path.positions[None, :, :],
            kernel,
            f,
            t_index,
            path.grid.dt,
        )[0]
    )
