"""Command-line surface: deterministic JSON in, deterministic JSON out.

Exit codes: 0 success, 1 malformed flags or inputs, 2 infeasible constant
mode, 3 boundary-risk refusal. Every command is a pure function of its flags,
input files and seed. All numbers are nats; ``--bits`` adds display-only
converted fields without touching the canonical ones.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from riskcert.certificates import (
    PacBayesInputs,
    build_certificate,
    resolve_constant_mode,
)
from riskcert.constants import (
    MAX_COMPOSITIONS,
    composition_count,
    log_I_kl_exact,
    log_I_kl_stirling,
)
from riskcert.errors import BoundaryRiskError, EnumerationInfeasibleError
from riskcert.klinverse import DEFAULT_TOL, kl_inverse_total
from riskcert.serialize import dumps_canonical
from riskcert.simplex import LossVector, SimplexVector
from riskcert.training import (
    ErrorPartition,
    LabelledDataset,
    PriorPolicy,
    TrainConfig,
    train,
)
from riskcert.verify import run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_BOUNDARY = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; the contract here is 1.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ValueError(f"{flag} expects a comma-separated list of numbers, got {text!r}")


def _parse_risks(text: str) -> SimplexVector:
    """Comma list of frequencies, or a path to a counts file (normalised)."""
    if os.path.exists(text):
        raw = Path(text).read_text().replace(",", " ").split()
        counts = [float(x) for x in raw]
        if not counts or min(counts) < 0:
            raise ValueError(f"counts file {text!r} must hold nonnegative numbers")
        total = sum(counts)
        if total <= 0:
            raise ValueError(f"counts file {text!r} sums to zero")
        return SimplexVector(tuple(c / total for c in counts))
    return SimplexVector(_parse_floats(text, "--risks"))


def _parse_range(text: str, flag: str) -> range:
    parts = text.split(":")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise ValueError(f"{flag} expects 'N' or 'LO:HI', got {text!r}")
    if hi < lo:
        raise ValueError(f"{flag}: empty range {text!r}")
    return range(lo, hi + 1)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text + "\n")
    else:
        Path(out).write_text(text + "\n")


def cmd_bound(args: argparse.Namespace) -> int:
    risks = _parse_risks(args.risks)
    losses = LossVector(_parse_floats(args.losses, "--losses")) if args.losses else None
    inputs = PacBayesInputs(
        m=args.m, M=risks.dim, delta=args.delta, kl_qp=args.kl, empirical_risk=risks
    )
    requested = args.mode
    mode = resolve_constant_mode(inputs.m, inputs.M, requested)
    if requested == "auto" and mode.value == "stirling":
        sys.stderr.write(
            f"note: exact enumeration infeasible at (m={inputs.m}, M={inputs.M}); "
            "falling back to the Stirling form\n"
        )
    cert = build_certificate(
        inputs, mode=mode, losses=losses, smoothing_alpha=args.smooth
    )
    doc = cert.to_dict()
    if args.bits:
        doc["budget_bits"] = cert.budget_nats / math.log(2.0)
        doc["kl_qp_bits"] = cert.inputs.kl_qp / math.log(2.0)
    _emit(dumps_canonical(doc), args.out)
    return EXIT_OK


def cmd_klinv(args: argparse.Namespace) -> int:
    u = SimplexVector(_parse_floats(args.u, "--u"))
    losses = LossVector(_parse_floats(args.losses, "--losses"))
    sol = kl_inverse_total(u, args.c, losses, args.tol)
    doc = {
        "u": list(u.probs),
        "c": args.c,
        "losses": list(losses.losses),
        "mu_star": None if math.isinf(sol.mu_star) else sol.mu_star,
        "lambda_star": None if math.isinf(sol.lambda_star) else sol.lambda_star,
        "v_star": list(sol.v_star.probs),
        "f_star": sol.f_star,
        "grad_u": list(sol.grad_u),
        "grad_c": None if math.isinf(sol.grad_c) else sol.grad_c,
        "residual": sol.residual,
        "one_sided": sol.one_sided,
    }
    _emit(dumps_canonical(doc), args.out)
    return EXIT_OK


def cmd_constants(args: argparse.Namespace) -> int:
    rows = []
    for M in _parse_range(args.M_range, "--M-range"):
        for m in _parse_range(args.m_range, "--m-range"):
            exact = None
            if composition_count(m, M) <= MAX_COMPOSITIONS:
                exact = log_I_kl_exact(m, M)
            stirling = log_I_kl_stirling(m, M) if m >= M else None
            rows.append({"m": m, "M": M, "log_exact": exact, "log_stirling": stirling})
    _emit(dumps_canonical({"rows": rows}), args.out)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    dataset = LabelledDataset.from_csv(args.data)
    part = ErrorPartition.from_dict(json.loads(Path(args.partition).read_text()))
    config_doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(config_doc, dict):
        raise ValueError(f"{args.config}: config must be a JSON object")
    prior_doc = config_doc.pop("prior", {})
    if args.seed is not None:
        config_doc["seed"] = args.seed
    if "epochs" not in config_doc or "learning_rate" not in config_doc:
        raise ValueError("training config must set 'epochs' and 'learning_rate'")
    config = TrainConfig.from_dict(config_doc)
    prior_policy = PriorPolicy(**prior_doc)

    result = train(dataset, part, prior_policy, config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.jsonl"
    history_path.write_text(
        "".join(dumps_canonical(rec, indent=None) + "\n" for rec in result.history)
    )
    cert_path = out_dir / "certificate.json"
    cert_path.write_text(result.certificate.to_json() + "\n")
    posterior_path = out_dir / "posterior.json"
    posterior_path.write_text(
        dumps_canonical(
            {
                "mean": result.posterior.mean.tolist(),
                "log_var": result.posterior.log_var.tolist(),
                "prior_mean": result.prior.mean.tolist(),
                "prior_var": result.prior.var.tolist(),
                "prior_provenance": result.prior.provenance,
            }
        )
        + "\n"
    )
    summary = {
        "epochs": config.epochs,
        "m_bound": result.certificate.inputs.m,
        "total_risk_bound": result.certificate.total_risk_bound,
        "budget_nats": result.certificate.budget_nats,
        "history": str(history_path),
        "certificate": str(cert_path),
        "posterior": str(posterior_path),
    }
    sys.stdout.write(dumps_canonical(summary) + "\n")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    report = run_suite(
        args.suite, seed=args.seed, trials=args.trials, samples=args.samples
    )
    _emit(dumps_canonical(report), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="riskcert",
        description="Risk certificates for discretised error types.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "bound", parents=[], help="emit a bound certificate for given empirical risks"
    )
    p.add_argument("--risks", required=True,
                   help="comma list of per-type frequencies, or a counts file to normalise")
    p.add_argument("--m", type=int, required=True, help="certified sample count")
    p.add_argument("--delta", type=float, required=True, help="confidence level in (0, 1]")
    p.add_argument("--kl", type=float, required=True,
                   help="KL divergence of the posterior from the prior, in nats")
    p.add_argument("--mode", choices=["exact", "stirling", "auto"], default="auto")
    p.add_argument("--losses", help="comma list of loss weights for a total-risk bound")
    p.add_argument("--smooth", type=float, default=None, metavar="ALPHA",
                   help="certify the pseudo-count smoothed risk vector instead of the raw one")
    p.add_argument("--bits", action="store_true",
                   help="add display-only fields converted from nats to bits")
    p.add_argument("--out", help="write the certificate here instead of stdout")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("klinv", help="solve the constrained kl-inverse")
    p.add_argument("--u", required=True, help="comma list: interior simplex point")
    p.add_argument("--c", type=float, required=True, help="kl budget, >= 0")
    p.add_argument("--losses", required=True, help="comma list of loss weights")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--out")
    p.set_defaults(func=cmd_klinv)

    p = sub.add_parser("constants", help="tabulate the budget constants over a grid")
    p.add_argument("--m-range", dest="m_range", required=True, help="'N' or 'LO:HI'")
    p.add_argument("--M-range", dest="M_range", required=True, help="'N' or 'LO:HI'")
    p.add_argument("--out")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("train", help="train a Gaussian posterior to minimise the bound")
    p.add_argument("--data", required=True, help="CSV: feature columns then integer label")
    p.add_argument("--partition", required=True, help="JSON error-partition config")
    p.add_argument("--config", help="JSON training config (TrainConfig fields + 'prior')")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default="train-out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run the Monte Carlo verification suites")
    p.add_argument("--suite", choices=["budget", "lemma5", "lemma7", "prop8", "all"],
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=2000, help="budget-suite sample draws")
    p.add_argument("--samples", type=int, default=100_000, help="domination-suite draws")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EnumerationInfeasibleError as exc:
        sys.stderr.write(f"riskcert: {exc}\n")
        return EXIT_INFEASIBLE
    except BoundaryRiskError as exc:
        sys.stderr.write(f"riskcert: {exc}\n")
        return EXIT_BOUNDARY
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"riskcert: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
