"""Command-line front end: ``ssgauss <command> [--config cfg.json] [flags]``.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, ldp, mc, moments, verify
from .covariance import NotPSDError, ProcessSpec
from .functionals import FunctionalSpec, IntegrabilityError, evaluate, simulate_functional
from .moments import QuadratureError
from .sampler import PathBatch, SamplingError, sample
from .specfun import alpha_h

log = logging.getLogger("ssgauss")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("simulate", "functional", "moments", "constants", "tail-fit", "small-ball", "verify")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    process: dict = field(default_factory=lambda: {"kind": "bm"})
    functional: dict = field(default_factory=lambda: {"kind": "delta"})
    method: str | None = None
    n: int = 1024
    T: float = 1.0
    N: int = 1000
    seed: int = 0
    eps_schedule: list | None = None
    options: dict = field(default_factory=dict)

    def process_spec(self) -> ProcessSpec:
        try:
            return ProcessSpec.from_dict(self.process)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"process: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"process.{exc}") from exc

    def functional_spec(self) -> FunctionalSpec:
        data = dict(self.functional)
        if self.eps_schedule:
            data["eps_schedule"] = self.eps_schedule
        try:
            return FunctionalSpec.from_dict(data)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"functional: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"functional.{exc}") from exc

    def validate(self):
        if not (isinstance(self.n, int) and self.n >= 2):
            raise ConfigError(f"n: grid size must be an integer >= 2, got {self.n!r}")
        if not (isinstance(self.N, int) and self.N >= 1):
            raise ConfigError(f"N: path count must be a positive integer, got {self.N!r}")
        if not (isinstance(self.T, (int, float)) and self.T > 0):
            raise ConfigError(f"T: horizon must be positive, got {self.T!r}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        self.process_spec()
        self.functional_spec()
        return self

    def to_dict(self):
        return {"process": self.process, "functional": self.functional, "method": self.method,
                "n": self.n, "T": self.T, "N": self.N, "seed": self.seed,
                "eps_schedule": self.eps_schedule, "options": self.options}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _provenance(cfg):
    return {"version": __version__, "config_hash": cfg.hash(), "config": cfg.to_dict()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _emit(report, out):
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------ commands


def cmd_simulate(cfg, args):
    if not args.out:
        raise ConfigError("out: simulate needs an output path (--out)")
    spec = cfg.process_spec()
    batch = sample(spec, cfg.n, cfg.T, cfg.N, cfg.seed, cfg.method, threads=args.threads)
    batch.meta.update(_provenance(cfg))
    batch.write(args.out)
    return EXIT_OK


def cmd_functional(cfg, args):
    fspec = cfg.functional_spec()
    if args.input:
        batch = PathBatch.read(args.input)
        fspec.validate(batch.spec)
        fs = evaluate(batch, fspec)
    else:
        spec = cfg.process_spec()
        fspec.validate(spec)
        fs = simulate_functional(spec, fspec, cfg.n, cfg.T, cfg.N, cfg.seed, cfg.method,
                                 threads=args.threads)
    fs.diagnostics.update(_provenance(cfg))
    if args.format == "json" or not args.out:
        _emit({**fs.diagnostics, "values": fs.values.tolist()}, args.out)
    else:
        fs.write_csv(args.out)
        fs.write_sidecar(args.out + ".json")
    return EXIT_OK


def cmd_moments(cfg, args):
    spec = cfg.process_spec()
    fspec = cfg.functional_spec()
    fspec.validate(spec)
    m_max = int(cfg.options.get("m_max", 2))
    mc_vals = None
    if cfg.options.get("mc", False):
        mc_vals = simulate_functional(spec, fspec, cfg.n, 1.0, cfg.N, cfg.seed, cfg.method,
                                      threads=args.threads).values
    reports = []
    for m in range(1, m_max + 1):
        rep = moments.MomentReport(m=m, process=spec.to_dict(), functional=fspec.kind)
        if fspec.kind == "delta":
            rep.exact, rep.exact_error = moments.exact_delta_moment(spec, m, return_error=True)
        elif fspec.kind == "riesz" and m == 1:
            rep.exact, rep.exact_error = moments.exact_riesz_moment(spec, fspec.beta), 0.0
        if mc_vals is not None:
            rep.mc, rep.mc_se = moments.mc_moment(mc_vals, m)
        reports.append(rep)
    if fspec.kind == "delta" and m_max >= 1:
        exp_rep = []
        for m in range(1, min(m_max, 2) + 1):
            exp_rep.append(moments.MomentReport(m=m, mode="exp-time", process=spec.to_dict(),
                                                exact=moments.exp_time_moment(spec, m)))
        reports.extend(exp_rep)
    _emit({**_provenance(cfg), "moments": {r.key(): r.to_dict() for r in reports}}, args.out)
    return EXIT_OK


def constants_report(spec: ProcessSpec, fspec: FunctionalSpec) -> dict:
    ab = fspec.validate(spec)
    d = spec.d
    beta = fspec.effective_beta(d)
    out = {"ab": ab, "critical_p": 1.0 / ab}
    if fspec.kind != "delta" or spec.kind in ("subfbm", "auxy"):
        rc = ldp.RateConstants(ab, provenance="mc-estimated",
                               extra={"note": "mc-estimated: run cmd verify tail first"})
        out["constants"] = rc.to_dict()
        return out
    if spec.kind in ("bm", "fbm"):
        H = spec.self_similarity
        lo, hi = ldp.chd_bounds(H, d)
        if math.isclose(lo, hi, rel_tol=1e-12):
            rc = ldp.RateConstants(ab, C=0.5 * (lo + hi), bounds=(lo, hi))
        else:
            rc = ldp.RateConstants(ab, bounds=(lo, hi), provenance="bounds-only")
            rc.extra["E1_bounds"] = sorted([ldp.e1_from_chd(lo, H, d), ldp.e1_from_chd(hi, H, d)])
    elif spec.kind == "rl":
        # RL constant from the fBm one: C_rl = C_fbm * alpha_h(H)^(1/H)
        H = spec.alpha
        lo, hi = ldp.chd_bounds(H, d)
        f = alpha_h(H) ** (1.0 / H)
        if math.isclose(lo, hi, rel_tol=1e-12):
            rc = ldp.RateConstants(ab, C=0.5 * (lo + hi) * f, bounds=(lo * f, hi * f))
        else:
            rc = ldp.RateConstants(ab, bounds=(lo * f, hi * f), provenance="bounds-only")
    else:  # bifbm
        HK = spec.self_similarity
        mgf, tail = ldp.bifbm_prefactors(spec.H, spec.K, beta)
        lo, hi = ldp.chd_bounds(HK, d)
        if math.isclose(lo, hi, rel_tol=1e-12):
            rc = ldp.RateConstants(ab, C=0.5 * (lo + hi) * tail, bounds=(lo * tail, hi * tail))
        else:
            rc = ldp.RateConstants(ab, bounds=(lo * tail, hi * tail), provenance="bounds-only")
        rc.extra.update(mgf_prefactor=mgf, tail_prefactor=tail,
                        critical_lambda_prefactor=ldp.bifbm_critical_prefactor(spec.H, spec.K, beta))
    out["constants"] = rc.to_dict()
    if rc.C is not None:
        out["critical_lambda"] = rc.C
    elif rc.bounds is not None:
        out["critical_lambda_bounds"] = list(rc.bounds)
    return out


def cmd_constants(cfg, args):
    spec = cfg.process_spec()
    fspec = cfg.functional_spec()
    _emit({**_provenance(cfg), **constants_report(spec, fspec)}, args.out)
    return EXIT_OK


def _read_samples(path):
    """Per-path values from a functional CSV (limit rows for the delta kind) or a plain column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    if head == ["path_id", "epsilon", "value"]:
        return np.array([float(r[2]) for r in body if float(r[1]) == 0.0])
    if head == ["path_id", "value"]:
        return np.array([float(r[1]) for r in body])
    raise ConfigError(f"input: unrecognised sample file header {head}")


def cmd_tail_fit(cfg, args):
    fspec = cfg.functional_spec()
    spec = cfg.process_spec()
    ab = fspec.validate(spec)
    if args.input:
        vals = _read_samples(args.input)
    else:
        vals = simulate_functional(spec, fspec, cfg.n, cfg.T, cfg.N, cfg.seed, cfg.method,
                                   threads=args.threads).values
    exponent = cfg.options.get("exponent", 1.0 / ab)
    mode = cfg.options.get("mode", "fixed")
    tf = mc.tail_fit(vals, exponent, mode=mode, n_boot=int(cfg.options.get("n_boot", 200)),
                     seed=cfg.seed)
    if args.format == "csv" and args.out:
        mc.write_survival_csv(vals, args.out)
        _emit({**_provenance(cfg), "tail_fit": tf.to_dict()}, args.out + ".json")
    else:
        _emit({**_provenance(cfg), "tail_fit": tf.to_dict()}, args.out)
    return EXIT_OK


def cmd_small_ball(cfg, args):
    spec = cfg.process_spec()
    grid = cfg.options.get("eps_grid") or list(np.linspace(0.4, 1.0, 13))
    fit = mc.small_ball_fit(spec, grid, cfg.N, cfg.seed, n=cfg.n, method=cfg.method,
                            threads=args.threads)
    _emit({**_provenance(cfg), "small_ball": fit.to_dict()}, args.out)
    return EXIT_OK


def cmd_verify(cfg, args):
    suite = args.suite or cfg.options.get("suite", "all")
    sizes = cfg.options.get("sizes")
    checks = verify.run(suite, seed=cfg.seed, threads=args.threads, sizes=sizes)
    ok = all(c["passed"] for c in checks)
    _emit({**_provenance(cfg), "suite": suite, "passed": ok, "checks": checks}, args.out)
    for c in checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['suite']}: {c['name']}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_VERIFY


HANDLERS = {
    "simulate": cmd_simulate,
    "functional": cmd_functional,
    "moments": cmd_moments,
    "constants": cmd_constants,
    "tail-fit": cmd_tail_fit,
    "small-ball": cmd_small_ball,
    "verify": cmd_verify,
}


# ------------------------------------------------------------ parsing


def build_parser():
    p = argparse.ArgumentParser(prog="ssgauss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ssgauss {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="worker cap (results do not depend on it)")
        sp.add_argument("--out")
        sp.add_argument("--format", choices=("csv", "json"), default=None)
        sp.add_argument("--process", help="bm | fbm | subfbm | bifbm | rl | auxy")
        sp.add_argument("--H", type=float)
        sp.add_argument("--K", type=float)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--d", type=int)
        sp.add_argument("--functional", help="delta | riesz | product")
        sp.add_argument("--beta", type=float)
        sp.add_argument("--n", type=int)
        sp.add_argument("--T", type=float)
        sp.add_argument("--N", type=int)
        sp.add_argument("--method")
        if name in ("functional", "tail-fit"):
            sp.add_argument("--input", help="path batch (functional) or sample CSV (tail-fit)")
        if name == "verify":
            sp.add_argument("suite", nargs="?", help="identities | moments | scaling | tails | "
                            "smallball | constants | all")
        if name == "moments":
            sp.add_argument("--m-max", type=int, dest="m_max")
            sp.add_argument("--mc", action="store_true")
    return p


def load_config(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a JSON object")
        unknown = set(data) - set(RunConfig().to_dict())
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
    cfg = RunConfig(**data)
    cfg.process = dict(cfg.process)
    cfg.functional = dict(cfg.functional)
    cfg.options = dict(cfg.options)
    if args.process:
        cfg.process = {"kind": args.process}
    for key in ("H", "K", "alpha", "d"):
        if getattr(args, key) is not None:
            cfg.process[key] = getattr(args, key)
    if args.functional:
        cfg.functional = {"kind": args.functional}
    if args.beta is not None:
        cfg.functional["beta"] = args.beta
    for key in ("n", "T", "N", "seed", "method"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    if getattr(args, "m_max", None) is not None:
        cfg.options["m_max"] = args.m_max
    if getattr(args, "mc", False):
        cfg.options["mc"] = True
    return cfg.validate()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return HANDLERS[args.command](cfg, args)
    except (ConfigError, IntegrabilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, SamplingError, NotPSDError, mc.TailFitError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
