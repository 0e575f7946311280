"""Command-line front end.

Every subcommand writes plot-ready CSV and/or JSON into ``--out`` plus a
``meta.json`` sidecar describing the run (tolerances, iteration counts,
seed, output files). Exit codes: 0 success, 1 input error, 2 solver
non-convergence, 3 infeasible dependence guess.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, affinity, covset, data_path, finance, maximality, transport
from .errors import (
    ConvergenceError,
    InfeasibleGuessError,
    InputError,
    SingularCovarianceError,
    UndefinedIndexError,
)
from .marginals import load_returns, read_numeric_csv
from .serialize import write_csv, write_json

log = logging.getLogger("extremedep")

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_INFEASIBLE = 0, 1, 2, 3
NEAR_INDEPENDENCE_INDEX = 1e3
COMMANDS = ("fit", "trajectory", "section", "scatter", "check", "stress", "price", "saliency")


class _NotConverged(Exception):
    pass


def parse_temps(text: str) -> np.ndarray:
    """``"lo:hi:n"`` -> n geometric temperatures from hi down to lo."""
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise InputError(f"--temps expects lo:hi:n, got {text!r}") from None
    if not (0 < lo < hi) or n < 2:
        raise InputError("--temps needs 0 < lo < hi and n >= 2")
    return np.geomspace(hi, lo, n)


def parse_pair(text: str):
    """``"1,1:2,2"`` (1-based entries) -> ((0, 0), (1, 1))."""
    try:
        a, b = text.split(":")
        pair = tuple(tuple(int(x) - 1 for x in part.split(",")) for part in (a, b))
    except ValueError:
        raise InputError(f"--pair expects i,j:k,l, got {text!r}") from None
    if any(len(p) != 2 for p in pair) or min(min(p) for p in pair) < 0:
        raise InputError(f"--pair expects positive 1-based i,j:k,l, got {text!r}")
    return pair


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="CSV of paired returns (default: bundled sample)")
    common.add_argument("--split", type=int, default=3, help="number of leading columns in X")
    common.add_argument("--temps", default="1e-3:1e2:40", help="geometric grid lo:hi:n")
    common.add_argument("--basis", choices=["orthant", "loewner"], default="orthant")
    common.add_argument("--seed", type=int, default=None, help="seed for all random draws")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--tol-marginal", type=float, default=transport.MARGINAL_TOL)
    common.add_argument("--tol-grad", type=float, default=None, help="fit gradient tolerance")
    common.add_argument("--config", help="JSON file whose keys override the flags")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="extremedep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("fit", parents=[common], help="fit the affinity matrix")
    p = sub.add_parser("trajectory", parents=[common], help="couplings along the temperature grid")
    p.add_argument("--parallel", action="store_true", help="cold-start solves in a thread pool")
    p = sub.add_parser("section", parents=[common], help="2-D projection of the covariance set")
    p.add_argument("--pair", default="1,1:2,2", help="two matrix entries, 1-based: i,j:k,l")
    p.add_argument("--n-dirs", type=int, default=360)
    p = sub.add_parser("scatter", parents=[common], help="entropic cross-covariances for random M")
    p.add_argument("--pair", default="1,1:2,2")
    p.add_argument("--n-draws", type=int, default=1000)
    p.add_argument("--t-low", type=float, default=0.05)
    p = sub.add_parser("check", parents=[common], help="extreme / positive-extreme verdict")
    p.add_argument("--sigma", help="JSON matrix to test (default: the empirical cross-covariance)")
    p.add_argument("--gap-tol", type=float, default=None)
    p.add_argument("--max-fw-iter", type=int, default=maximality.MAX_FW_ITER)
    p = sub.add_parser("stress", parents=[common], help="Markowitz dependence stress test")
    p.add_argument("--risk-aversion", type=float, default=3.0)
    p.add_argument("--periods", type=float, default=252.0, help="periods per year")
    p.add_argument("--unit", type=float, default=100.0, help="returns are in 1/unit (100: percent)")
    p = sub.add_parser("price", parents=[common], help="rainbow option price along the trajectory")
    p.add_argument("--spec", help="rainbow JSON spec (default: bundled configuration)")
    sub.add_parser("saliency", parents=[common], help="SVD of the affinity matrix")
    return parser


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such config file: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.config}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise InputError("config file must hold a JSON object")
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config") or not hasattr(args, dest):
            raise InputError(f"unknown config key {key!r} for '{args.command}'")
        setattr(args, dest, value)
    return args


def _check_args(args):
    if not args.tol_marginal > 0:
        raise InputError("--tol-marginal must be positive")
    if args.tol_grad is not None and not args.tol_grad > 0:
        raise InputError("--tol-grad must be positive")


def _input_path(args) -> Path:
    return Path(args.input) if args.input else data_path("sample_returns.csv")


def _load(args):
    return load_returns(_input_path(args), args.split)


def _fit(args, P, Q):
    fit = affinity.fit_affinity(
        P, Q, affinity.target_cov(P, Q), grad_tol=args.tol_grad,
    )
    log.info("fit: %d iterations, relative error %.3e", fit.iterations, fit.fit_error)
    return fit


def _fit_meta(fit) -> dict:
    return {
        "fit_iterations": fit.iterations,
        "fit_converged": fit.converged,
        "fit_error": fit.fit_error,
        "grad_norm": fit.grad_norm,
    }


def _require_fit(fit):
    if not fit.converged:
        raise _NotConverged(
            f"affinity fit did not converge (gradient norm {fit.grad_norm:.3e}, "
            f"relative error {fit.fit_error:.3e})"
        )


class Run:
    """Collects output files and metadata for the sidecar."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.files: list[str] = []
        self.meta: dict = {}

    def json(self, name, obj):
        write_json(self.out / name, obj)
        self.files.append(name)

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.files.append(name)

    def finish(self, status: str):
        a = self.args
        meta = {
            "command": a.command,
            "version": __version__,
            "status": status,
            "outputs": self.files,
            "input": str(_input_path(a)) if a.command != "price" else None,
            "split": a.split,
            "seed": a.seed,
            "tolerances": {"marginal": a.tol_marginal, "gradient": a.tol_grad},
        }
        meta.update(self.meta)
        write_json(self.out / "meta.json", meta)


def cmd_fit(run: Run, args):
    P, Q = _load(args)
    fit = _fit(args, P, Q)
    out = fit.to_dict()
    out["near_independence"] = bool(fit.dependence_index >= NEAR_INDEPENDENCE_INDEX)
    out["x_names"], out["y_names"] = list(P.names), list(Q.names)
    run.json("fit.json", out)
    run.meta.update(_fit_meta(fit))
    _require_fit(fit)


def cmd_trajectory(run: Run, args):
    P, Q = _load(args)
    fit = _fit(args, P, Q)
    run.meta.update(_fit_meta(fit))
    _require_fit(fit)
    temps = parse_temps(args.temps)
    points = affinity.trajectory(
        P, Q, fit.m_hat, temps, marginal_tol=args.tol_marginal, parallel=bool(args.parallel)
    )
    header, rows = affinity.trajectory_rows(points)
    run.csv("trajectory.csv", header, rows)
    run.meta["solver_iterations"] = [p.iterations for p in points]


def cmd_section(run: Run, args):
    P, Q = _load(args)
    sec = covset.section(P, Q, parse_pair(args.pair), int(args.n_dirs))
    header, rows = sec.rows()
    run.csv("section.csv", header, rows)
    run.json("section.json", sec.to_dict())
    run.meta.update({"n_dirs": int(args.n_dirs), "kind": "projection"})


def cmd_scatter(run: Run, args):
    P, Q = _load(args)
    pair = parse_pair(args.pair)
    seed = 0 if args.seed is None else args.seed
    sigmas = covset.scatter(
        P, Q, int(args.n_draws), float(args.t_low), seed, marginal_tol=args.tol_marginal
    )
    pts = covset.project(sigmas, pair)
    run.csv("scatter.csv", ["x", "y"], pts.tolist())
    run.meta.update({"n_draws": int(args.n_draws), "t_low": float(args.t_low), "seed": seed})


def cmd_check(run: Run, args):
    P, Q = _load(args)
    if args.sigma:
        try:
            with open(args.sigma, encoding="utf-8") as fh:
                sigma = np.asarray(json.load(fh), dtype=float)
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"cannot read --sigma: {exc}") from None
    else:
        sigma = affinity.target_cov(P, Q)
    B = maximality.ConicBasis(args.basis, (P.dim, Q.dim))
    result = maximality.classify(
        P, Q, sigma, B, max_fw_iter=int(args.max_fw_iter), gap_tol=args.gap_tol
    )
    result["basis"] = args.basis
    run.json("check.json", result)
    run.meta.update({
        "basis": args.basis,
        "gap_tol": result["maximality"]["gap_tol"],
        "fw_iterations": result["maximality"]["iterations"],
        "directions_probed": result["directions_probed"],
    })


def cmd_stress(run: Run, args):
    P, Q = _load(args)
    _, data = read_numeric_csv(_input_path(args))
    spec = finance.PortfolioSpec.from_returns(
        data, float(args.risk_aversion), periods=float(args.periods), unit=float(args.unit),
        asset_names=tuple(P.names) + tuple(Q.names),
    )
    fit = _fit(args, P, Q)
    run.meta.update(_fit_meta(fit))
    _require_fit(fit)
    temps = parse_temps(args.temps)
    if not np.any(np.isclose(temps, 1.0)):
        temps = np.sort(np.append(temps, 1.0))[::-1]
    report = finance.stress_portfolio(
        P, Q, spec, fit.m_hat, temps, sigma_hat=affinity.target_cov(P, Q),
        marginal_tol=args.tol_marginal,
    )
    run.csv("stress.csv", ["T", "value"],
            [[p.temperature, p.stressed_variance] for p in report.points])
    header, rows = report.rows()
    run.csv("stress_detail.csv", header, rows)
    out = report.to_dict()
    out["spec"] = spec.to_dict()
    out["flat_rho_bound"] = finance.flat_rho_bound(P.dim, Q.dim)
    run.json("stress.json", out)
    rhos = np.linspace(0.0, 1.0, 101)
    corr = np.corrcoef(data, rowvar=False)
    n = P.dim
    scan = finance.flat_rho_scan(rhos, n, Q.dim, corr[:n, :n], corr[n:, n:])
    run.csv("flat_rho.csv", ["rho", "min_eigenvalue"], np.column_stack([rhos, scan]).tolist())


def cmd_price(run: Run, args):
    path = Path(args.spec) if args.spec else data_path("rainbow_default.json")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such spec file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if args.seed is not None:
        raw["seed"] = args.seed
        for leg in ("x", "y"):
            raw.get(leg, {}).pop("seed", None)
    try:
        spec = finance.RainbowSpec.from_dict(raw)
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed rainbow spec ({exc})") from None
    temps = parse_temps(args.temps)
    fit_opts = {} if args.tol_grad is None else {"grad_tol": args.tol_grad}
    res = finance.price_rainbow(spec, temps, marginal_tol=args.tol_marginal, fit_opts=fit_opts)
    header, rows = res.rows()
    run.csv("price.csv", header, rows)
    out = res.to_dict()
    out["spec"] = spec.to_dict()
    run.json("price.json", out)
    run.meta.update({
        "spec": str(path),
        "seeds": [spec.x.seed, spec.y.seed],
        "fit_iterations": res.fit.iterations,
        "fit_error": res.fit.fit_error,
    })


def cmd_saliency(run: Run, args):
    P, Q = _load(args)
    fit = _fit(args, P, Q)
    run.meta.update(_fit_meta(fit))
    _require_fit(fit)
    res = finance.saliency(fit.m_hat)
    out = res.to_dict()
    out["x_names"], out["y_names"] = list(P.names), list(Q.names)
    run.json("saliency.json", out)


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args = _apply_config(args)
        _check_args(args)
        run = Run(args)
        HANDLERS[args.command](run, args)
    except (InputError, UndefinedIndexError, SingularCovarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleGuessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.finish("infeasible")
        return EXIT_INFEASIBLE
    except (ConvergenceError, _NotConverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.finish("not-converged")
        return EXIT_CONVERGENCE
    run.finish("ok")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
