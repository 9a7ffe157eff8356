"""Command-line interface: config-driven runs with reproducible outputs.

Subcommands
-----------
energy             ground-energy ladder estimate -> energy.csv
observable         damped-number or Weyl expectation -> observable.csv
compare-oracle     Monte Carlo vs exact truncated-Fock values -> JSON report
oracle             exact-diagonalization tasks (spectra, energy curves,
                   positivity, relative bound, uniqueness) -> CSV/JSON
check-polarization randomized polarization-frame identity checks -> JSON
kernel-table       precompute the isotropic kernel interpolation table -> npz

Configuration is TOML; the [paths] seed and thread count can be overridden by
FIBERPATH_SEED / FIBERPATH_THREADS, and those in turn by the --seed/--threads
flags.  All numeric output is printed with repr-exact precision (%.17g) and
runs are byte-for-byte reproducible for a fixed seed, path count, and chunk
size (worker count does not affect results).

Exit codes: 0 success, 2 configuration/validation error, 3 statistical
failure (an estimate that lost meaning, or a failed numerical check).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import tomli

from . import __version__
from .estimators import (
    Ensemble,
    StatisticalFailure,
    expectation_exp_number,
    expectation_weyl,
    ground_energy,
    partition_ladder,
)
from .field_model import (
    FormFactor,
    IsotropicKernel,
    ModeSet,
    ModeSumKernel,
    TestFunction,
)
from .fock_oracle import FockModel, positivity_check
from .paths import PathGrid
from .polarization import (
    basis_axis_cross,
    basis_meridian,
    coherence_residual,
    transverse_projector,
)

__all__ = ["main"]


class ConfigError(ValueError):
    """A configuration problem the user must fix (exit code 2)."""


def _fmt(x):
    return f"{float(x):.17g}"


def _load_config(path):
    if path is None:
        raise ConfigError("this subcommand requires --config")
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def _section(cfg, name, required=True):
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _get(sec, secname, key, default=None, required=False):
    if key in sec:
        return sec[key]
    if required:
        raise ConfigError(f"missing {secname}.{key}")
    return default


def _vector3(value, where):
    try:
        vec = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must be a 3-vector") from exc
    if len(vec) != 3:
        raise ConfigError(f"{where} must have exactly 3 components")
    return vec


def _resolve(cli_value, env_name, cfg_value, default, cast):
    if cli_value is not None:
        return cast(cli_value)
    env = os.environ.get(env_name)
    if env is not None:
        try:
            return cast(env)
        except ValueError as exc:
            raise ConfigError(f"{env_name} is not a valid value: {env!r}") from exc
    if cfg_value is not None:
        return cast(cfg_value)
    return default


def _build_model(cfg, *, required):
    """Returns (kernel, mode_set, form_factor); all None if no [model]."""
    model = _section(cfg, "model", required=required)
    if not model:
        return None, None, None
    kind = _get(model, "model", "kind", required=True)
    if kind == "modeset":
        pairs = _get(model, "model", "pairs", required=True)
        pair_ks = np.array([_vector3(p, "model.pairs entries") for p in pairs])
        weights = _get(model, "model", "weights")
        pair_weights = None if weights is None else np.asarray(weights, dtype=float)
        mode_set = ModeSet.from_pairs(pair_ks, pair_weights)
        phi = _get(model, "model", "phi", default=1.0)
        phi_values = np.broadcast_to(np.asarray(phi, dtype=float), (mode_set.n_pairs,))
        form_factor = FormFactor.table(np.asarray(phi_values))
        return ModeSumKernel(mode_set, form_factor), mode_set, form_factor
    if kind == "continuum":
        cutoff = float(_get(model, "model", "cutoff", required=True))
        kernel = IsotropicKernel(cutoff)
        table = _get(model, "model", "table")
        if table is not None:
            from .field_model import KernelTable

            kernel = kernel.with_table(KernelTable.load(table))
        return kernel, None, None
    raise ConfigError(f"model.kind must be 'modeset' or 'continuum', got {kind!r}")


def _build_ensemble(cfg, args, horizon):
    paths = _section(cfg, "paths")
    n_steps = int(_get(paths, "paths", "n_steps", required=True))
    n_paths = int(_get(paths, "paths", "n_paths", required=True))
    seed = _resolve(args.seed, "FIBERPATH_SEED", paths.get("seed"), 0, int)
    threads = _resolve(args.threads, "FIBERPATH_THREADS", paths.get("threads"), 1, int)
    grid = PathGrid(horizon, n_steps)
    return Ensemble(
        grid=grid,
        n_paths=n_paths,
        seed=seed,
        n_batches=int(_get(paths, "paths", "n_batches", default=32)),
        chunk_size=int(_get(paths, "paths", "chunk_size", default=4096)),
        threads=threads,
    )


def _estimator_section(cfg):
    est = _section(cfg, "estimator")
    e = float(_get(est, "estimator", "e", default=0.0))
    P = _vector3(_get(est, "estimator", "P", default=[0.0, 0.0, 0.0]), "estimator.P")
    rule = _get(est, "estimator", "diagonal_rule", default="deterministic-qv")
    return est, e, np.asarray(P), rule


def _constant_test_function(mode_set, vec):
    values = np.tile(np.asarray(vec, dtype=complex), (mode_set.n_modes, 1))
    return TestFunction(mode_set, values)


def _out_dir(cfg, args):
    out = args.out if args.out is not None else _section(cfg, "output", required=False).get("dir")
    out = out if out is not None else "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_summary(out_dir, command, cfg, ensemble, outputs, extra=None):
    payload = {
        "version": __version__,
        "command": command,
        "config": cfg,
        "outputs": sorted(outputs),
    }
    if ensemble is not None:
        payload["seed"] = ensemble.seed
        payload["threads"] = ensemble.threads
        payload["n_paths"] = ensemble.n_paths
        payload["n_steps"] = ensemble.grid.n_steps
    if extra:
        payload.update(extra)
    _write_json(os.path.join(out_dir, "summary.json"), payload)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_energy(args):
    cfg = _load_config(args.config)
    est, e, P, rule = _estimator_section(cfg)
    ladder = _get(est, "estimator", "t_ladder", required=True)
    ladder = sorted(float(t) for t in ladder)
    if len(ladder) < 2:
        raise ConfigError("estimator.t_ladder needs at least two times")
    kernel, _, _ = _build_model(cfg, required=e != 0.0)
    ensemble = _build_ensemble(cfg, args, horizon=ladder[-1])
    out_dir = _out_dir(cfg, args)
    result = ground_energy(P, e, ladder, ensemble, kernel, diagonal_rule=rule)
    rows = [
        [
            _fmt(P[0]), _fmt(P[1]), _fmt(P[2]), _fmt(e),
            _fmt(step["t1"]), _fmt(step["t2"]),
            _fmt(step["energy"]), _fmt(step["stderr"]),
            str(ensemble.n_paths), str(ensemble.grid.n_steps),
        ]
        for step in result.metadata["ladder"]
    ]
    csv_path = os.path.join(out_dir, "energy.csv")
    _write_csv(
        csv_path,
        ["P_x", "P_y", "P_z", "e", "t1", "t2", "E_hat", "stderr", "n_paths", "n_steps"],
        rows,
    )
    _write_summary(out_dir, "energy", cfg, ensemble, ["energy.csv"],
                   {"energy": result.real, "stderr": result.stderr})
    return 0


def _cmd_observable(args):
    cfg = _load_config(args.config)
    est, e, P, rule = _estimator_section(cfg)
    kind = _get(est, "estimator", "kind", required=True)
    t = float(_get(_section(cfg, "paths"), "paths", "t", required=True))
    kernel, mode_set, _ = _build_model(cfg, required=True)
    if mode_set is None:
        raise ConfigError("observables need model.kind = 'modeset'")
    ensemble = _build_ensemble(cfg, args, horizon=2.0 * t)
    out_dir = _out_dir(cfg, args)
    csv_path = os.path.join(out_dir, "observable.csv")
    if kind == "expN":
        beta = float(_get(est, "estimator", "beta", required=True))
        result = expectation_exp_number(beta, P, e, t, ensemble, kernel, diagonal_rule=rule)
        _write_csv(
            csv_path,
            ["beta", "P_x", "P_y", "P_z", "e", "t", "value", "stderr"],
            [[_fmt(beta), _fmt(P[0]), _fmt(P[1]), _fmt(P[2]), _fmt(e), _fmt(t),
              _fmt(np.real(result.mean)), _fmt(result.stderr)]],
        )
        extra = {"value": float(np.real(result.mean)), "stderr": result.stderr}
    elif kind == "weyl":
        f_vec = _get(est, "estimator", "f", required=True)
        f = _constant_test_function(mode_set, _vector3(f_vec, "estimator.f"))
        result = expectation_weyl(f, P, e, t, ensemble, kernel, diagonal_rule=rule)
        mean = complex(result.mean)
        _write_csv(
            csv_path,
            ["P_x", "P_y", "P_z", "e", "t", "value_re", "value_im", "stderr"],
            [[_fmt(P[0]), _fmt(P[1]), _fmt(P[2]), _fmt(e), _fmt(t),
              _fmt(mean.real), _fmt(mean.imag), _fmt(result.stderr)]],
        )
        extra = {"value_re": mean.real, "value_im": mean.imag, "stderr": result.stderr}
    else:
        raise ConfigError(f"estimator.kind must be 'expN' or 'weyl', got {kind!r}")
    _write_summary(out_dir, "observable", cfg, ensemble, ["observable.csv"], extra)
    return 0


def _cmd_compare_oracle(args):
    cfg = _load_config(args.config)
    est, e, P, rule = _estimator_section(cfg)
    kernel, mode_set, form_factor = _build_model(cfg, required=True)
    if mode_set is None:
        raise ConfigError("compare-oracle needs model.kind = 'modeset'")
    oracle_cfg = _section(cfg, "oracle")
    n_max = int(_get(oracle_cfg, "oracle", "n_max", required=True))
    model = FockModel(mode_set, form_factor, n_max)
    paths_cfg = _section(cfg, "paths")
    t = float(_get(paths_cfg, "paths", "t", required=True))
    out_dir = _out_dir(cfg, args)
    comparisons = []

    ladder = [float(x) for x in _get(est, "estimator", "t_ladder", default=[t])]
    ensemble = _build_ensemble(cfg, args, horizon=max(ladder))
    values = partition_ladder([P], ladder, e, ensemble, kernel, diagonal_rule=rule)
    for l_idx, t_l in enumerate(ladder):
        mc = values[(0, l_idx)]
        exact = model.vacuum_semigroup(P, e, t_l)
        comparisons.append({
            "observable": "partition",
            "t": t_l,
            "mc": float(np.real(mc.mean)),
            "stderr": mc.stderr,
            "oracle": exact,
            "sigma": abs(float(np.real(mc.mean)) - exact) / mc.stderr,
        })

    beta = _get(est, "estimator", "beta")
    f_vec = _get(est, "estimator", "f")
    if beta is not None or f_vec is not None:
        ensemble2 = _build_ensemble(cfg, args, horizon=2.0 * t)
        if beta is not None:
            mc = expectation_exp_number(float(beta), P, e, t, ensemble2, kernel,
                                        diagonal_rule=rule)
            exact = model.exp_number_expectation(float(beta), P, e, t=t)
            comparisons.append({
                "observable": "exp_number",
                "beta": float(beta),
                "t": t,
                "mc": float(np.real(mc.mean)),
                "stderr": mc.stderr,
                "oracle": exact,
                "sigma": abs(float(np.real(mc.mean)) - exact) / mc.stderr,
            })
        if f_vec is not None:
            f = _constant_test_function(mode_set, _vector3(f_vec, "estimator.f"))
            mc = expectation_weyl(f, P, e, t, ensemble2, kernel, diagonal_rule=rule)
            exact = model.weyl_expectation(f, P, e, t=t)
            mc_val = complex(mc.mean)
            comparisons.append({
                "observable": "weyl",
                "t": t,
                "mc_re": mc_val.real,
                "mc_im": mc_val.imag,
                "stderr": mc.stderr,
                "oracle_re": exact.real,
                "oracle_im": exact.imag,
                "sigma": abs(mc_val - exact) / mc.stderr,
            })

    report = {
        "comparisons": comparisons,
        "max_sigma_deviation": max(c["sigma"] for c in comparisons),
        "n_max": n_max,
        "e": e,
        "P": [float(x) for x in P],
    }
    _write_json(os.path.join(out_dir, "compare_oracle.json"), report)
    _write_summary(out_dir, "compare-oracle", cfg, ensemble, ["compare_oracle.json"],
                   {"max_sigma_deviation": report["max_sigma_deviation"]})
    return 0


def _cmd_oracle(args):
    cfg = _load_config(args.config)
    est, e, P, _ = _estimator_section(cfg)
    kernel, mode_set, form_factor = _build_model(cfg, required=True)
    if mode_set is None:
        raise ConfigError("oracle tasks need model.kind = 'modeset'")
    oracle_cfg = _section(cfg, "oracle")
    n_max = int(_get(oracle_cfg, "oracle", "n_max", required=True))
    out_dir = _out_dir(cfg, args)
    task = args.task
    outputs = []
    extra = {}
    model = FockModel(mode_set, form_factor, n_max)

    if task == "spectra":
        momenta = [_vector3(p, "oracle.momenta entries")
                   for p in _get(oracle_cfg, "oracle", "momenta", default=[list(P)])]
        es = [float(x) for x in _get(oracle_cfg, "oracle", "es", default=[e])]
        n_levels = int(_get(oracle_cfg, "oracle", "n_levels", default=8))
        rows = []
        for P_vec in momenta:
            for e_val in es:
                evals = model.spectrum(P_vec, e_val)[:n_levels]
                for level, val in enumerate(evals):
                    rows.append([_fmt(P_vec[0]), _fmt(P_vec[1]), _fmt(P_vec[2]),
                                 _fmt(e_val), str(level), _fmt(val)])
        path = os.path.join(out_dir, "spectra.csv")
        _write_csv(path, ["P_x", "P_y", "P_z", "e", "level", "eigenvalue"], rows)
        outputs.append("spectra.csv")
    elif task == "energy-curves":
        momenta = [_vector3(p, "oracle.momenta entries")
                   for p in _get(oracle_cfg, "oracle", "momenta", default=[list(P)])]
        e_squares = [float(x) for x in
                     _get(oracle_cfg, "oracle", "e_squares", required=True)]
        curves = model.energy_curves(momenta, e_squares)
        rows = []
        for i, P_vec in enumerate(momenta):
            for j, e2 in enumerate(e_squares):
                rows.append([_fmt(P_vec[0]), _fmt(P_vec[1]), _fmt(P_vec[2]),
                             _fmt(e2), _fmt(curves[i, j])])
        path = os.path.join(out_dir, "energy_curves.csv")
        _write_csv(path, ["P_x", "P_y", "P_z", "e_square", "energy"], rows)
        outputs.append("energy_curves.csv")
    elif task == "positivity":
        t = float(_get(_section(cfg, "paths"), "paths", "t", required=True))
        report = positivity_check(
            t, e,
            grid_size=int(_get(oracle_cfg, "oracle", "grid_size", default=64)),
            n_max=int(_get(oracle_cfg, "oracle", "positivity_n_max", default=14)),
        )
        payload = {k: report[k] for k in
                   ("min_real", "max_imag", "tail_estimate", "passed", "strict", "t", "e", "lam")}
        _write_json(os.path.join(out_dir, "positivity.json"), payload)
        outputs.append("positivity.json")
        extra["passed"] = report["passed"]
        if not report["passed"]:
            _write_summary(out_dir, "oracle", cfg, None, outputs, extra)
            raise StatisticalFailure("positivity check failed")
    elif task == "relative-bound":
        trials = int(_get(oracle_cfg, "oracle", "trials", default=1000))
        seed = _resolve(args.seed, "FIBERPATH_SEED",
                        _section(cfg, "paths", required=False).get("seed"), 0, int)
        report = model.relative_bound_check(trials, seed)
        _write_json(os.path.join(out_dir, "relative_bound.json"), report)
        outputs.append("relative_bound.json")
        extra["violations"] = report["violations"]
        if report["violations"]:
            _write_summary(out_dir, "oracle", cfg, None, outputs, extra)
            raise StatisticalFailure("relative-bound violations found")
    elif task == "uniqueness":
        es = [float(x) for x in _get(oracle_cfg, "oracle", "es", default=[e])]
        drift_step = int(_get(oracle_cfg, "oracle", "drift_step", default=2))
        bigger = FockModel(mode_set, form_factor, n_max + drift_step)
        entries = []
        for e_val in es:
            info = model.ground(P, e_val)
            e0_big = bigger.ground_energy(P, e_val)
            denom = max(abs(e0_big), 1e-12)
            entries.append({
                "e": e_val,
                "energy": info["energy"],
                "multiplicity": info["multiplicity"],
                "gap": info["gap"],
                "relative_drift": abs(info["energy"] - e0_big) / denom,
            })
        payload = {"P": [float(x) for x in P], "n_max": n_max,
                   "n_max_refined": n_max + drift_step, "entries": entries}
        _write_json(os.path.join(out_dir, "uniqueness.json"), payload)
        outputs.append("uniqueness.json")
        if any(item["multiplicity"] != 1 for item in entries):
            _write_summary(out_dir, "oracle", cfg, None, outputs, extra)
            raise StatisticalFailure("ground state multiplicity is not 1")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown oracle task {task!r}")

    _write_summary(out_dir, "oracle", cfg, None, outputs, extra)
    return 0


def _cmd_check_polarization(args):
    rng = np.random.default_rng(args.check_seed)
    n = args.samples
    worst = {
        "completeness": 0.0,
        "orthonormality": 0.0,
        "transversality": 0.0,
        "meridian_coherence": 0.0,
        "axis_cross_coherence": 0.0,
    }
    axis = np.array([0.0, 0.0, 1.0])
    for _ in range(n):
        k = rng.standard_normal(3)
        while min(np.linalg.norm(np.cross(k, axis)), np.linalg.norm(k)) < 1e-6:
            k = rng.standard_normal(3)
        psi = rng.uniform(-np.pi, np.pi)
        for basis in (basis_axis_cross, basis_meridian):
            frame = basis(k)
            gram = frame @ frame.T
            worst["orthonormality"] = max(
                worst["orthonormality"], float(np.max(np.abs(gram - np.eye(2)))))
            worst["transversality"] = max(
                worst["transversality"], float(np.max(np.abs(frame @ k))) / np.linalg.norm(k))
            completeness = frame.T @ frame
            worst["completeness"] = max(
                worst["completeness"],
                float(np.max(np.abs(completeness - transverse_projector(k)))))
        worst["meridian_coherence"] = max(
            worst["meridian_coherence"],
            coherence_residual(k, psi, basis=basis_meridian, axis=axis, weight=1.0))
        worst["axis_cross_coherence"] = max(
            worst["axis_cross_coherence"],
            coherence_residual(k, psi, basis=basis_axis_cross, axis=axis, weight=0.0))
    passed = all(v <= args.tolerance for v in worst.values())
    payload = {
        "samples": n,
        "seed": args.check_seed,
        "tolerance": args.tolerance,
        "residuals": worst,
        "passed": passed,
    }
    out_dir = args.out if args.out is not None else "."
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "polarization_checks.json"), payload)
    print(json.dumps(payload["residuals"], indent=2, sort_keys=True))
    if not passed:
        raise StatisticalFailure("polarization identities exceeded tolerance")
    return 0


def _cmd_kernel_table(args):
    kernel = IsotropicKernel(args.cutoff)
    table = kernel.build_table(args.tau_max, args.r_max,
                               tau_step=args.tau_step, r_step=args.r_step)
    table.save(args.table_out)
    print(f"wrote {args.table_out}: cutoff={_fmt(args.cutoff)} "
          f"tau_max={_fmt(args.tau_max)} r_max={_fmt(args.r_max)} "
          f"shape={table.A.shape[0]}x{table.A.shape[1]}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="TOML configuration file")
    sub.add_argument("--out", help="output directory (overrides [output].dir)")
    sub.add_argument("--seed", type=int, help="override the path seed")
    sub.add_argument("--threads", type=int, help="worker process count")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fiberpath",
        description="Path-integral Monte Carlo for fiber Hamiltonians of a "
                    "particle coupled to a transverse Bose field, with exact "
                    "truncated-Fock cross checks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("energy", help="ground-energy ladder estimate")
    _add_common(p)
    p.set_defaults(func=_cmd_energy)

    p = subs.add_parser("observable", help="ground-state observable estimate")
    _add_common(p)
    p.set_defaults(func=_cmd_observable)

    p = subs.add_parser("compare-oracle", help="Monte Carlo vs exact diagonalization")
    _add_common(p)
    p.set_defaults(func=_cmd_compare_oracle)

    p = subs.add_parser("oracle", help="exact diagonalization tasks")
    _add_common(p)
    p.add_argument("--task", required=True,
                   choices=["spectra", "energy-curves", "positivity",
                            "relative-bound", "uniqueness"])
    p.set_defaults(func=_cmd_oracle)

    p = subs.add_parser("check-polarization", help="polarization frame identities")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", dest="check_seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_check_polarization)

    p = subs.add_parser("kernel-table", help="precompute the isotropic kernel table")
    p.add_argument("--cutoff", type=float, required=True)
    p.add_argument("--tau-max", type=float, required=True)
    p.add_argument("--r-max", type=float, required=True)
    p.add_argument("--tau-step", type=float, default=2e-3)
    p.add_argument("--r-step", type=float, default=2e-3)
    p.add_argument("--out", dest="table_out", required=True, help="output .npz path")
    p.set_defaults(func=_cmd_kernel_table)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StatisticalFailure as exc:
        print(f"statistical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
