"""Monte Carlo estimators built on the discretized stochastic action.

All estimators share one engine: paths are generated in fixed-size chunks of
counter-based substreams (chunk boundaries never depend on the worker count),
an evaluator maps each chunk to named per-path values, and per-batch sums are
reduced in chunk order -- so results are bit-for-bit reproducible for a given
(seed, n_paths, chunk_size), serial or parallel.

Every estimator folds each sampled path with its sign flip analytically (the
flip is measure preserving; weights are even and couplings odd under it), so
phases enter as cosines and the free-theory and P = 0 values are exactly real
by construction rather than small-imaginary.

Error bars are batch means: paths are split into ``n_batches`` contiguous
substream ranges, and the standard error is the spread of per-batch means (or
per-batch ratios, for self-normalized quantities) with the usual 1/sqrt(B(B-1))
normalization.  Means themselves are computed from the total sums.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .action import (
    block_forms_mode_sum,
    pairwise_form_isotropic,
    point_coupling_chunk,
    quadratic_variation_form,
    weyl_couplings_chunk,
)
from .field_model import (
    IsotropicKernel,
    ModeSumKernel,
    TestFunction,
    field_covariance,
    ito_isometry_mean,
)
from .paths import PathGrid, sample_increments

__all__ = [
    "Ensemble",
    "EstimateResult",
    "GreenInsertion",
    "GreenSegment",
    "StatisticalFailure",
    "diamagnetic_check",
    "expectation_exp_number",
    "expectation_weyl",
    "green_n_point",
    "ground_energy",
    "isometry_check",
    "partition",
    "partition_ladder",
    "quadratic_variation_bound_check",
]


class StatisticalFailure(RuntimeError):
    """An estimate lost statistical meaning (e.g. a nonpositive partition
    value inside a logarithm).  The CLI maps this to its own exit code."""


@dataclass(frozen=True)
class Ensemble:
    """Path ensemble specification: grid, size, and reproducibility knobs.

    ``chunk_size`` is a fixed generation granularity, deliberately independent
    of ``threads``; changing the worker count neither changes which substream
    a path uses nor the order in which chunk results are reduced.
    """

    grid: PathGrid
    n_paths: int
    seed: int
    n_batches: int = 32
    chunk_size: int = 4096
    threads: int = 1
    d: int = 3

    def __post_init__(self):
        if self.n_paths < self.n_batches:
            raise ValueError("need at least one path per batch")
        if self.n_batches < 16:
            raise ValueError("fewer than 16 batches gives unreliable error bars")
        if self.chunk_size < 1 or self.threads < 1:
            raise ValueError("chunk_size and threads must be positive")


@dataclass
class EstimateResult:
    """A Monte Carlo estimate with batch-means error bar."""

    mean: complex
    stderr: float
    n_samples: int
    n_batches: int
    metadata: dict = field(default_factory=dict)

    @property
    def real(self):
        return float(np.real(self.mean))


# ---------------------------------------------------------------------------
# sweep engine
# ---------------------------------------------------------------------------


def _chunk_ranges(n_paths, chunk_size):
    return [(s, min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]


def _sweep_chunk(grid, seed, d, n_paths, n_batches, evaluator, kwargs, start, end):
    stream_ids = np.arange(start, end)
    increments = sample_increments(grid, stream_ids, seed, d=d)
    positions = np.concatenate(
        [np.zeros((end - start, 1, d)), np.cumsum(increments, axis=1)], axis=1
    )
    values = evaluator(increments, positions, grid.dt, **kwargs)
    batch_ids = (stream_ids * n_batches) // n_paths
    sums = {}
    for name, vals in values.items():
        if name.startswith("min:"):
            acc = np.full(n_batches, np.inf)
            np.minimum.at(acc, batch_ids, np.asarray(vals, dtype=float))
        else:
            acc = np.zeros(n_batches, dtype=complex)
            np.add.at(acc, batch_ids, np.asarray(vals, dtype=complex))
        sums[name] = acc
    counts = np.zeros(n_batches, dtype=np.int64)
    np.add.at(counts, batch_ids, 1)
    return sums, counts


def _sweep(ensemble: Ensemble, evaluator, kwargs):
    """Run ``evaluator`` over the whole ensemble; return per-batch sums.

    Returns (sums: dict[name -> (n_batches,) complex], counts: (n_batches,)).
    """
    ranges = _chunk_ranges(ensemble.n_paths, ensemble.chunk_size)
    args = [
        (
            ensemble.grid,
            ensemble.seed,
            ensemble.d,
            ensemble.n_paths,
            ensemble.n_batches,
            evaluator,
            kwargs,
            start,
            end,
        )
        for start, end in ranges
    ]
    if ensemble.threads > 1 and len(ranges) > 1:
        with ProcessPoolExecutor(max_workers=ensemble.threads) as pool:
            results = list(pool.map(_sweep_chunk_star, args))
    else:
        results = [_sweep_chunk(*a) for a in args]
    total_counts = np.zeros(ensemble.n_batches, dtype=np.int64)
    totals: dict[str, np.ndarray] = {}
    for sums, counts in results:  # fixed chunk order: deterministic reduction
        total_counts += counts
        for name, acc in sums.items():
            if name.startswith("min:"):
                if name not in totals:
                    totals[name] = np.full(ensemble.n_batches, np.inf)
                totals[name] = np.minimum(totals[name], acc)
            else:
                if name not in totals:
                    totals[name] = np.zeros(ensemble.n_batches, dtype=complex)
                totals[name] += acc
    return totals, total_counts


def _sweep_chunk_star(args):
    return _sweep_chunk(*args)


def _mean_stats(sums, counts):
    """Mean from total sums; stderr from the spread of batch means."""
    total = complex(np.sum(sums))
    n = int(np.sum(counts))
    mean = total / n
    batch_means = sums / counts
    b = len(batch_means)
    center = np.mean(batch_means)
    var = float(np.sum(np.abs(batch_means - center) ** 2)) / (b * (b - 1))
    return mean, float(np.sqrt(var))


def _ratio_stats(num_sums, den_sums):
    """Self-normalized ratio from total sums; stderr from batch ratios."""
    den_total = complex(np.sum(den_sums))
    if np.real(den_total) <= 0.0:
        raise StatisticalFailure("denominator estimate is nonpositive; increase n_paths")
    den_batches = np.real(den_sums)
    if np.any(den_batches <= 0.0):
        raise StatisticalFailure(
            "a batch denominator is nonpositive; error bars are unreliable at this "
            "sample size"
        )
    ratio = complex(np.sum(num_sums)) / den_total
    batch_ratios = num_sums / den_sums
    b = len(batch_ratios)
    center = np.mean(batch_ratios)
    var = float(np.sum(np.abs(batch_ratios - center) ** 2)) / (b * (b - 1))
    return ratio, float(np.sqrt(var))


def _maybe_real(value):
    if isinstance(value, complex) and value.imag == 0.0:
        return value.real
    return value


# ---------------------------------------------------------------------------
# per-chunk evaluators (module level so worker processes can unpickle them)
# ---------------------------------------------------------------------------


def _full_form(increments, positions, dt, kernel, diagonal_rule, n_upto=None):
    """q1 over [0, s_n]^2 per path, via the kernel-appropriate fast path."""
    n = increments.shape[1] if n_upto is None else n_upto
    if isinstance(kernel, ModeSumKernel):
        return block_forms_mode_sum(
            increments, positions, kernel, [0, n], diagonal_rule, dt
        )[:, 0, 0]
    return pairwise_form_isotropic(
        increments, positions, kernel, (0, n), (0, n), diagonal_rule, dt
    )


def _eval_partition(increments, positions, dt, kernel, e, momenta, t_indices, diagonal_rule):
    """cos(P . b(t)) * exp(-(e^2/2) q1([0,t]^2)) for each (P, t) requested."""
    out = {}
    weights = {}
    if e != 0.0 and kernel is not None:
        if isinstance(kernel, ModeSumKernel):
            cuts = [0] + list(t_indices)
            forms = block_forms_mode_sum(
                increments, positions, kernel, cuts, diagonal_rule, dt
            )
            for l_idx in range(len(t_indices)):
                q = np.einsum("bij->b", forms[:, : l_idx + 1, : l_idx + 1])
                weights[l_idx] = np.exp(-0.5 * e * e * q)
        else:
            for l_idx, n_t in enumerate(t_indices):
                q = pairwise_form_isotropic(
                    increments, positions, kernel, (0, n_t), (0, n_t), diagonal_rule, dt
                )
                weights[l_idx] = np.exp(-0.5 * e * e * q)
    else:
        ones = np.ones(increments.shape[0])
        for l_idx in range(len(t_indices)):
            weights[l_idx] = ones
    for i_p, P in enumerate(momenta):
        for l_idx, n_t in enumerate(t_indices):
            phase = np.cos(positions[:, n_t, :] @ P)
            out[f"z_p{i_p}_t{l_idx}"] = phase * weights[l_idx]
    return out


def _eval_exp_number(increments, positions, dt, kernel, e, beta, P, n_t, diagonal_rule):
    n = increments.shape[1]
    if isinstance(kernel, ModeSumKernel):
        forms = block_forms_mode_sum(
            increments, positions, kernel, [0, n_t, n], diagonal_rule, dt
        )
        q_full = np.einsum("bij->b", forms)
        cross = forms[:, 0, 1]
    else:
        q_full = pairwise_form_isotropic(
            increments, positions, kernel, (0, n), (0, n), diagonal_rule, dt
        )
        cross = pairwise_form_isotropic(
            increments, positions, kernel, (0, n_t), (n_t, n), diagonal_rule, dt
        )
    w = np.exp(-0.5 * e * e * q_full)
    phase = np.cos(positions[:, n, :] @ P)
    den = phase * w
    # weight from the second-layer factorization: the two half-horizon blocks
    # sit a second-layer distance beta apart, so the cross block is damped by
    # exp(-beta) relative to the plain action -- net factor
    # exp(e^2 (1 - e^{-beta}) * cross).
    num = den * np.exp(e * e * (1.0 - np.exp(-beta)) * cross)
    return {"num": num, "den": den}


def _eval_weyl(increments, positions, dt, kernel, e, f, P, n_t, q0_value, diagonal_rule):
    n = increments.shape[1]
    q_full = _full_form(increments, positions, dt, kernel, diagonal_rule)
    w = np.exp(-0.5 * e * e * q_full)
    c_odd, c_even = weyl_couplings_chunk(
        increments, positions, kernel, f, n_t, dt, split=True)
    ph = positions[:, n, :] @ P
    pref = np.exp(-0.5 * q0_value) * w * np.exp(e * c_even)
    # momentum phases enter as exp(-i P.b) (the orientation that matches the
    # oracle operator exp(+i Phi(f)) given the Re[z exp(-i k.x)] couplings);
    # folding each path with its sign flip turns the flip-odd coupling part
    # into cosh/sinh while the flip-even part stays in the prefactor
    num = pref * (np.cos(ph) * np.cosh(e * c_odd) + 1j * np.sin(ph) * np.sinh(e * c_odd))
    den = np.cos(ph) * w
    return {"num": num, "den": den}


def _eval_green(
    increments,
    positions,
    dt,
    kernel,
    e,
    cuts,
    seg_offsets,
    momenta,
    weyl_items,
    diagonal_rule,
):
    """Per-path value of the n-point functional.

    ``weyl_items`` is a list of (boundary_index_in_grid, offset, theta, f,
    q_self) tuples; ``seg_offsets`` the second-layer time of each segment;
    ``momenta`` the per-segment momentum vectors.
    """
    B = increments.shape[0]
    J = len(cuts) - 1
    forms = block_forms_mode_sum(increments, positions, kernel, cuts, diagonal_rule, dt)
    even = np.zeros(B)
    for a in range(J):
        for b in range(J):
            xi = np.exp(-abs(seg_offsets[a] - seg_offsets[b]))
            even += -0.5 * e * e * xi * forms[:, a, b]
    odd = np.zeros(B)
    for n_ins, off_ins, theta, f_ins, _ in weyl_items:
        for a in range(J):
            xi = np.exp(-abs(seg_offsets[a] - off_ins))
            c_odd, c_even = weyl_couplings_chunk(
                increments, positions, kernel, f_ins, n_ins, dt,
                idx=(cuts[a], cuts[a + 1]), split=True,
            )
            odd += -e * theta * xi * c_odd
            even += -e * theta * xi * c_even
    for i, (n_i, off_i, th_i, f_i, _) in enumerate(weyl_items):
        for j, (n_j, off_j, th_j, f_j, _) in enumerate(weyl_items):
            xi = np.exp(-abs(off_i - off_j))
            pp_even, pp_odd = point_coupling_chunk(
                positions, kernel, f_i, n_i, f_j, n_j, dt, split=True)
            even += -0.5 * th_i * th_j * xi * pp_even
            odd += -0.5 * th_i * th_j * xi * pp_odd
    ph = np.zeros(B)
    for a in range(J):
        ph += (positions[:, cuts[a + 1], :] - positions[:, cuts[a], :]) @ momenta[a]
    # phase orientation exp(-i sum P_j . db_j); the sign-flipped partner path
    # conjugates the phase and negates the odd couplings
    value = np.exp(even) * (np.cos(ph) * np.cosh(odd) - 1j * np.sin(ph) * np.sinh(odd))
    return {"value": value}


def _eval_qv_form(increments, positions, dt, kernel, mu):
    return {"qv": quadratic_variation_form(increments, positions, kernel, mu)}


def _eval_isometry(increments, positions, dt, kernel):
    n = increments.shape[1]
    return {
        "q1": _full_form(increments, positions, dt, kernel, "realized-increments")
    }


def _eval_diamagnetic(increments, positions, dt, kernel, e, P, n_t, diagonal_rule):
    if e != 0.0 and kernel is not None:
        q = _full_form(increments, positions, dt, kernel, diagonal_rule, n_upto=n_t)
        w = np.exp(-0.5 * e * e * q)
    else:
        w = np.ones(increments.shape[0])
    phase = np.cos(positions[:, n_t, :] @ P)
    zp = phase * w
    margin = w - np.abs(zp)  # pointwise >= 0: |cos| <= 1 exactly
    return {"z0": w, "zp": zp, "min:margin": margin}


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------


def _validate_kernel(e, kernel):
    if e != 0.0 and kernel is None:
        raise ValueError("a kernel is required at nonzero coupling")
    if kernel is not None and not isinstance(kernel, (ModeSumKernel, IsotropicKernel)):
        raise TypeError(f"unsupported kernel type {type(kernel).__name__}")


def partition_ladder(momenta, ts, e, ensemble, kernel=None, diagonal_rule="deterministic-qv"):
    """Partition estimates for every (P, t) pair, sharing one path sweep.

    Returns a dict ``(i_momentum, i_t) -> EstimateResult``.  The values are
    exactly real (the antithetic fold turns the phase into a cosine).
    """
    _validate_kernel(e, kernel)
    momenta = [np.asarray(P, dtype=float) for P in momenta]
    t_indices = [ensemble.grid.index_of(t) for t in ts]
    if sorted(t_indices) != t_indices or len(set(t_indices)) != len(t_indices):
        raise ValueError("ts must be strictly increasing")
    if t_indices[0] <= 0:
        raise ValueError("ts must be positive")
    sums, counts = _sweep(
        ensemble,
        _eval_partition,
        dict(
            kernel=kernel,
            e=e,
            momenta=momenta,
            t_indices=t_indices,
            diagonal_rule=diagonal_rule,
        ),
    )
    out = {}
    for i_p, P in enumerate(momenta):
        for l_idx, t in enumerate(ts):
            mean, stderr = _mean_stats(sums[f"z_p{i_p}_t{l_idx}"], counts)
            out[(i_p, l_idx)] = EstimateResult(
                mean=_maybe_real(mean),
                stderr=stderr,
                n_samples=ensemble.n_paths,
                n_batches=ensemble.n_batches,
                metadata={
                    "estimator": "partition",
                    "P": P.tolist(),
                    "t": float(t),
                    "e": e,
                    "seed": ensemble.seed,
                    "n_steps": ensemble.grid.n_steps,
                    "diagonal_rule": diagonal_rule,
                    "antithetic": True,
                },
            )
    return out

def partition(P, t, e, ensemble, kernel=None, diagonal_rule="deterministic-qv"):
    """Estimate of the vacuum semigroup element at fiber momentum P, time t."""
    return partition_ladder([P], [t], e, ensemble, kernel, diagonal_rule)[(0, 0)]


def ground_energy(P, e, t_ladder, ensemble, kernel=None, diagonal_rule="deterministic-qv"):
    """Two-point estimator of the fiber ground energy from a time ladder.

    Uses E-hat = -log(Z(t2)/Z(t1)) / (t2 - t1) on the last ladder pair; the
    full ladder of partition values and adjacent-pair energy estimates is in
    ``metadata["ladder"]`` so convergence in t is visible.  Raises
    :class:`StatisticalFailure` if any partition estimate is nonpositive.
    """
    ts = sorted(float(t) for t in t_ladder)
    if len(ts) < 2:
        raise ValueError("t_ladder needs at least two times")
    results = partition_ladder([P], ts, e, ensemble, kernel, diagonal_rule)
    zs = [results[(0, l)] for l in range(len(ts))]
    for t, z in zip(ts, zs):
        if z.real <= 0.0:
            raise StatisticalFailure(f"partition estimate at t = {t} is nonpositive")
    ladder = []
    for l in range(len(ts) - 1):
        t1, t2 = ts[l], ts[l + 1]
        z1, z2 = zs[l].real, zs[l + 1].real
        est = -np.log(z2 / z1) / (t2 - t1)
        # error propagation from the partition error bars (batch correlations
        # between Z(t1) and Z(t2) make this conservative)
        err = np.hypot(zs[l].stderr / z1, zs[l + 1].stderr / z2) / (t2 - t1)
        ladder.append(
            {
                "t1": t1,
                "t2": t2,
                "Z1": z1,
                "Z2": z2,
                "energy": float(est),
                "stderr": float(err),
            }
        )
    final = ladder[-1]
    return EstimateResult(
        mean=final["energy"],
        stderr=final["stderr"],
        n_samples=ensemble.n_paths,
        n_batches=ensemble.n_batches,
        metadata={
            "estimator": "ground_energy",
            "P": list(np.asarray(P, dtype=float)),
            "e": e,
            "t_ladder": ts,
            "ladder": ladder,
            "seed": ensemble.seed,
            "n_steps": ensemble.grid.n_steps,
            "diagonal_rule": diagonal_rule,
        },
    )


def expectation_exp_number(beta, P, e, t, ensemble, kernel, diagonal_rule="deterministic-qv"):
    """Self-normalized estimate of the damped-number expectation exp(-beta N).

    The path horizon is [0, 2t]; the numerator reweights the plain action by
    exp(e^2 (1 - e^{-beta}) D) with D the off-diagonal half-horizon block of
    the double sum (the two halves sit a second-layer distance beta apart).
    As t grows the ratio converges to the ground-state expectation of
    exp(-beta N) in the fiber P.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    _validate_kernel(e, kernel)
    if kernel is None:
        raise ValueError("expectation_exp_number needs a kernel (it is trivial at e = 0)")
    P = np.asarray(P, dtype=float)
    n_t = ensemble.grid.index_of(t)
    if abs(2.0 * t - ensemble.grid.t_end) > 1e-9 * max(1.0, ensemble.grid.t_end):
        raise ValueError("the ensemble horizon must equal 2 t")
    sums, counts = _sweep(
        ensemble,
        _eval_exp_number,
        dict(kernel=kernel, e=e, beta=beta, P=P, n_t=n_t, diagonal_rule=diagonal_rule),
    )
    ratio, stderr = _ratio_stats(sums["num"], sums["den"])
    return EstimateResult(
        mean=_maybe_real(ratio),
        stderr=stderr,
        n_samples=ensemble.n_paths,
        n_batches=ensemble.n_batches,
        metadata={
            "estimator": "expectation_expN",
            "beta": beta,
            "P": P.tolist(),
            "e": e,
            "t": t,
            "seed": ensemble.seed,
            "n_steps": ensemble.grid.n_steps,
            "diagonal_rule": diagonal_rule,
        },
    )


def expectation_weyl(f, P, e, t, ensemble, kernel, diagonal_rule="deterministic-qv"):
    """Self-normalized estimate of a Weyl-operator expectation.

    ``f`` must be a Hermitian-even test function on the kernel's mode set (the
    smeared field is then self-adjoint).  The per-path weight carries the
    field fluctuation factor exp(-q0(f,f)/2) and the path-field cross coupling
    exp(-e C); at P = 0 the value is exactly real.
    """
    _validate_kernel(e, kernel)
    if not isinstance(kernel, ModeSumKernel):
        raise ValueError("expectation_weyl needs a discrete mode-sum kernel")
    P = np.asarray(P, dtype=float)
    n_t = ensemble.grid.index_of(t)
    if abs(2.0 * t - ensemble.grid.t_end) > 1e-9 * max(1.0, ensemble.grid.t_end):
        raise ValueError("the ensemble horizon must equal 2 t")
    q0 = field_covariance(kernel.mode_set, None, f, f)
    if abs(q0.imag) > 1e-12 * max(1.0, abs(q0.real)):
        raise ValueError("q0(f, f) must be real for a Hermitian-even test function")
    sums, counts = _sweep(
        ensemble,
        _eval_weyl,
        dict(
            kernel=kernel,
            e=e,
            f=f,
            P=P,
            n_t=n_t,
            q0_value=q0.real,
            diagonal_rule=diagonal_rule,
        ),
    )
    ratio, stderr = _ratio_stats(sums["num"], sums["den"])
    return EstimateResult(
        mean=_maybe_real(ratio),
        stderr=stderr,
        n_samples=ensemble.n_paths,
        n_batches=ensemble.n_batches,
        metadata={
            "estimator": "expectation_weyl",
            "P": P.tolist(),
            "e": e,
            "t": t,
            "q0": q0.real,
            "seed": ensemble.seed,
            "n_steps": ensemble.grid.n_steps,
            "diagonal_rule": diagonal_rule,
        },
    )


@dataclass(frozen=True)
class GreenSegment:
    """One semigroup segment: duration and the fiber momentum it carries."""

    duration: float
    momentum: tuple

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")


@dataclass(frozen=True)
class GreenInsertion:
    """Operator inserted at the boundary after segment ``boundary`` (1-based).

    Exactly one of ``f`` (a Weyl insertion with strength ``theta``) or
    ``number_damping`` (an exp(-beta N) block with beta >= 0) must be set.
    Insertions sharing a boundary apply in list order.
    """

    boundary: int
    f: TestFunction | None = None
    theta: float = 1.0
    number_damping: float | None = None

    def __post_init__(self):
        if (self.f is None) == (self.number_damping is None):
            raise ValueError("set exactly one of f or number_damping")
        if self.number_damping is not None and self.number_damping < 0:
            raise ValueError("number damping beta must be nonnegative")


def green_n_point(segments, insertions, e, ensemble, kernel, diagonal_rule="deterministic-qv"):
    """Vacuum n-point functional with Weyl and damped-number insertions.

    ``segments`` is a list of :class:`GreenSegment` whose durations must tile
    the ensemble horizon; ``insertions`` a list of :class:`GreenInsertion` at
    interior boundaries.  Degenerate cases collapse to the other estimators:
    one segment and no insertions is the partition integrand, and two equal
    segments with one number block reproduce the exp(-beta N) numerator
    path by path.
    """
    _validate_kernel(e, kernel)
    if not isinstance(kernel, ModeSumKernel):
        raise ValueError("green_n_point needs a discrete mode-sum kernel")
    segments = list(segments)
    if not segments:
        raise ValueError("need at least one segment")
    total = sum(s.duration for s in segments)
    if abs(total - ensemble.grid.t_end) > 1e-9 * max(1.0, ensemble.grid.t_end):
        raise ValueError("segment durations must tile the ensemble horizon")
    cuts = [0]
    acc = 0.0
    for s in segments:
        acc += s.duration
        cuts.append(ensemble.grid.index_of(acc))
    momenta = [np.asarray(s.momentum, dtype=float) for s in segments]
    m = len(segments)
    for ins in insertions:
        if not 1 <= ins.boundary <= m - 1:
            raise ValueError("insertions must sit at interior segment boundaries")
    # second-layer times: number blocks shift everything after them
    seg_offsets = np.zeros(m)
    weyl_items = []
    offset = 0.0
    by_boundary = {}
    for ins in insertions:
        by_boundary.setdefault(ins.boundary, []).append(ins)
    for j in range(1, m + 1):
        seg_offsets[j - 1] = offset
        for ins in by_boundary.get(j, []):
            if ins.number_damping is not None:
                offset += ins.number_damping
            else:
                weyl_items.append((cuts[ins.boundary], offset, ins.theta, ins.f, None))
    sums, counts = _sweep(
        ensemble,
        _eval_green,
        dict(
            kernel=kernel,
            e=e,
            cuts=cuts,
            seg_offsets=seg_offsets,
            momenta=momenta,
            weyl_items=weyl_items,
            diagonal_rule=diagonal_rule,
        ),
    )
    mean, stderr = _mean_stats(sums["value"], counts)
    return EstimateResult(
        mean=_maybe_real(mean),
        stderr=stderr,
        n_samples=ensemble.n_paths,
        n_batches=ensemble.n_batches,
        metadata={
            "estimator": "green_n_point",
            "segments": [
                {"duration": s.duration, "P": list(np.asarray(s.momentum, dtype=float))}
                for s in segments
            ],
            "n_insertions": len(insertions),
            "e": e,
            "seed": ensemble.seed,
            "n_steps": ensemble.grid.n_steps,
            "diagonal_rule": diagonal_rule,
        },
    )


def diamagnetic_check(P, e, t, ensemble, kernel=None, diagonal_rule="deterministic-qv"):
    """Pathwise diamagnetic comparison |Z(P)| <= Z(0).

    The inequality holds sample by sample (the phase has modulus at most one),
    so beyond the two estimates the report carries the minimum pathwise margin
    w * (1 - |cos|), which is nonnegative up to rounding.
    """
    _validate_kernel(e, kernel)
    P = np.asarray(P, dtype=float)
    n_t = ensemble.grid.index_of(t)
    sums, counts = _sweep(
        ensemble,
        _eval_diamagnetic,
        dict(kernel=kernel, e=e, P=P, n_t=n_t, diagonal_rule=diagonal_rule),
    )
    z0_mean, z0_err = _mean_stats(sums["z0"], counts)
    zp_mean, zp_err = _mean_stats(sums["zp"], counts)
    z0 = EstimateResult(z0_mean.real, z0_err, ensemble.n_paths, ensemble.n_batches,
                        {"estimator": "partition", "P": [0.0] * ensemble.d, "t": t, "e": e})
    zp = EstimateResult(zp_mean.real, zp_err, ensemble.n_paths, ensemble.n_batches,
                        {"estimator": "partition", "P": P.tolist(), "t": t, "e": e})
    min_margin = float(np.min(np.real(sums["min:margin"])))
    return {
        "Z0": z0,
        "ZP": zp,
        "margin": float(z0.real - abs(zp.mean)),
        "min_pathwise_margin": min_margin,
        "pathwise": min_margin >= 0.0,
    }


def quadratic_variation_bound_check(mu, ensemble, kernel):
    """Monte Carlo mean of the scalar-kernel double sum against its bound.

    The martingale structure kills the off-diagonal expectation, so the mean
    must not exceed t * ||phi/sqrt(omega)||^2 (it equals it); the report says
    how many standard errors separate the estimate from the bound.
    """
    if not isinstance(kernel, IsotropicKernel):
        raise TypeError(
            "the quadratic-variation bound compares against the radial scalar "
            "kernel; pass an IsotropicKernel"
        )
    mu = int(mu)
    if not 0 <= mu <= 2:
        raise ValueError("mu must be a Cartesian component index in {0, 1, 2}")
    sums, counts = _sweep(ensemble, _eval_qv_form, dict(kernel=kernel, mu=mu))
    mean, stderr = _mean_stats(sums["qv"], counts)
    bound = ensemble.grid.t_end * kernel.scalar_norm_sq()
    mean = float(np.real(mean))
    return {
        "estimate": EstimateResult(mean, stderr, ensemble.n_paths, ensemble.n_batches,
                                   {"estimator": "quadratic_variation_bound", "mu": mu}),
        "bound": float(bound),
        "excess_sigmas": (mean - bound) / stderr if stderr > 0 else 0.0,
    }


def isometry_check(ensemble, kernel):
    """Realized double form over the whole horizon vs. its exact mean."""
    sums, counts = _sweep(ensemble, _eval_isometry, dict(kernel=kernel))
    mean, stderr = _mean_stats(sums["q1"], counts)
    expected = ito_isometry_mean(kernel, ensemble.grid.t_end)
    mean = float(np.real(mean))
    return {
        "estimate": EstimateResult(mean, stderr, ensemble.n_paths, ensemble.n_batches,
                                   {"estimator": "isometry_check"}),
        "expected": float(expected),
        "deviation_sigmas": (mean - expected) / stderr if stderr > 0 else 0.0,
    }
