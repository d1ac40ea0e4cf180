"""Command-line pipeline: certificates, energy synthesis, embedding and wave blocks.

Every command prints a JSON report {"command", "config", "clauses", "timing"}
and exits 0 when all clauses pass, 1 on a failed algebraic certificate, 2 on a
failed numerical check and 3 on a usage error.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

EXIT_PASS, EXIT_CERT, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3


class ConfigError(click.UsageError):
    pass


@dataclass
class PipelineConfig:
    n: int = 2
    seed: int = 0
    mode: str = "exact"
    out: str | None = None
    resolution: int | None = None
    refine_resolution: int | None = None
    eps: float = 0.1
    lam: float = 0.5
    delta: float = 0.2
    gamma: dict | None = None
    spread_config: str = "toy"
    spread_index: int = 1
    max_trials: int = 100
    hessians: str = "witness"
    zero_cd: bool = False
    cd: dict | None = None
    dps: int = 60
    tau0_floor: float = 1e-40
    rho_samples: int = 50
    residual_law: bool = True
    lambdas: list = field(default_factory=lambda: [0.5, 0.7, 0.8, 0.9, 0.95, 0.99])
    grad_tol: float = 1e-10
    hessian_tol: float = 1e-5
    newton_tol: float = 1e-10
    identity_tol: float = 1e-8
    det_tol: float = 1e-6
    correlation_min: float = 0.99
    convexity_pairs: int = 10000
    csv_stride: int = 8
    timing: bool = True

    @classmethod
    def load(cls, path: str | None, **overrides) -> "PipelineConfig":
        data = {}
        if path:
            try:
                data = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as ex:
                raise ConfigError(f"cannot read config {path}: {ex}") from ex
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def pow2(v):
            return isinstance(v, int) and v >= 4 and v & (v - 1) == 0

        if not isinstance(self.n, int) or self.n < 2:
            raise ConfigError("n must be an integer >= 2")
        if self.mode not in ("exact", "float"):
            raise ConfigError("mode must be exact or float")
        for name in ("resolution", "refine_resolution"):
            v = getattr(self, name)
            if v is not None and not pow2(v):
                raise ConfigError(f"{name} must be a power of two >= 4")
        for name in ("eps", "delta", "grad_tol", "hessian_tol", "newton_tol", "identity_tol", "det_tol", "tau0_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not (0 < self.eps < 1 and 0 < self.delta < 1 and 0 <= self.lam <= 1):
            raise ConfigError("eps and delta must lie in (0, 1), lam in [0, 1]")
        if self.spread_config not in ("toy", "zstar"):
            raise ConfigError("spread_config must be toy or zstar")
        if self.hessians not in ("witness", "identity"):
            raise ConfigError("hessians must be witness or identity")
        if self.csv_stride < 1 or self.max_trials < 1 or self.rho_samples < 1:
            raise ConfigError("csv_stride, max_trials and rho_samples must be positive")


def _plain(v):
    """JSON-ready value with floats at fixed precision."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, (float, np.floating)) or hasattr(v, "__float__") and not isinstance(v, str):
        x = float(v)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return float(f"{x:.12g}")
    return v


class Report:
    def __init__(self, command: str, cfg: PipelineConfig):
        self.command = command
        self.cfg = cfg
        self.clauses: list[dict] = []
        self.timing: dict = {}

    def add(self, cid: str, ref: str, ok: bool, value, bound, detail=None) -> None:
        c = {"id": cid, "paper_ref": ref, "status": "PASS" if ok else "FAIL", "value": value, "bound": bound}
        if detail:
            c["detail"] = detail
        self.clauses.append(c)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timing[name] = time.perf_counter() - t0

    @property
    def passed(self) -> bool:
        return bool(self.clauses) and all(c["status"] == "PASS" for c in self.clauses)

    def to_dict(self) -> dict:
        return _plain({
            "command": self.command,
            "config": asdict(self.cfg),
            "clauses": self.clauses,
            "timing": self.timing if self.cfg.timing else None,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _emit(rep: Report, fail_code: int) -> int:
    text = rep.to_json()
    click.echo(text)
    if rep.cfg.out:
        out = Path(rep.cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{rep.command}.json").write_text(text + "\n")
    return EXIT_PASS if rep.passed else fail_code


def _outdir(cfg: PipelineConfig) -> Path | None:
    if not cfg.out:
        return None
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _compat_constants(cfg: PipelineConfig):
    from .foundation import decode_rational
    from .param_family import REFERENCE_CD, CompatConstants

    if cfg.zero_cd:
        return CompatConstants(c=(Fraction(0),) * 5, d=(Fraction(0),) * 5)
    if cfg.cd:
        try:
            c = tuple(decode_rational(v) for v in cfg.cd["c"])
            d = tuple(decode_rational(v) for v in cfg.cd["d"])
        except (KeyError, TypeError, ValueError) as ex:
            raise ConfigError(f"cd override needs five-entry lists c and d: {ex}") from ex
        if len(c) != 5 or len(d) != 5:
            raise ConfigError("cd override needs five-entry lists c and d")
        return CompatConstants(c=c, d=d)
    return REFERENCE_CD


def _energy(cfg: PipelineConfig, Z):
    from .convex_builder import base_hessians_float, build_F, build_F0, witness_energy

    if cfg.hessians == "identity":
        F0 = build_F0(Z)
        H = base_hessians_float(F0)
        return build_F(Z, H), H, None
    return witness_energy(Z, seed=cfg.seed, max_trials=cfg.max_trials)


# ---------------------------------------------------------------------------
# commands


def run_certify(cfg: PipelineConfig) -> tuple[Report, int]:
    from .nondegeneracy import q_factor, reduced_system, witness_search
    from .param_family import compat_certificate, reference_Zstar

    rep = Report("certify", cfg)
    Z = reference_Zstar(cfg.n)
    cd = _compat_constants(cfg)
    with rep.stage("compat"):
        cc = compat_certificate(Z if cfg.mode == "exact" else Z.to_float(), cd)
    failing = [list(p) for p in cc.failing_pairs()]
    rep.add("compat", "compatibility inequalities at the reference parameter", cc.passed and not failing,
            cc.margin, 0, {"failing_pairs": failing} if failing else None)
    rep.add("separation", "distinct vertices and base points", cc.min_sep_zeta > 0 and cc.min_sep_omega > 0,
            min(cc.min_sep_zeta, cc.min_sep_omega), 0)
    with rep.stage("witness"):
        try:
            e, _, cert = witness_search(Z, seed=cfg.seed, max_trials=cfg.max_trials)
        except RuntimeError as ex:
            cert = None
            rep.add("witness", "nondegeneracy witness", False, cfg.max_trials, cfg.max_trials, {"error": str(ex)})
    if cert is not None:
        rep.add("witness", "nondegeneracy witness", cert.passed, cert.trials, cfg.max_trials,
                {"pattern": [[str(v) for v in row] for row in e]})
        for k in range(1, 6):
            rep.add(f"J{k}", "implicit-system determinant nonzero", cert.J[k] != 0, cert.J[k], 0)
        for k in range(1, 6):
            rep.add(f"N{k}", "sheet determinant nonzero", cert.N[k] != 0, cert.N[k], 0)
    with rep.stage("degenerate"):
        pattern = [(Fraction(1),) * 5] * 5
        q = q_factor(Z, [Fraction(1)] * 5)
        if cfg.n >= 3:
            dets = [reduced_system(i, Z, pattern).complement_det for i in range(1, 6)]
            ok = q == 0 and all(d == 0 for d in dets)
            val = max(abs(d) for d in dets)
        else:
            ok, val = q == 0, abs(q)
        rep.add("degenerate_equal_eps", "equal epsilon pattern is singular", ok, val, 0)
    out = _outdir(cfg)
    if out and cert is not None:
        (out / "certificate.json").write_text(cert.to_json() + "\n")
    return rep, EXIT_CERT


def run_construct_f(cfg: PipelineConfig) -> tuple[Report, int]:
    from .convex_builder import convex_min_eigenvalue, convexity_pairs, midpoint_violations
    from .param_family import reference_Zstar

    rep = Report("construct-f", cfg)
    rng = np.random.default_rng(cfg.seed)
    Z = reference_Zstar(cfg.n)
    with rep.stage("build"):
        F, H, _ = _energy(cfg, Z)
    with rep.stage("vertices"):
        rows = F.vertex_report(H)
    for r in rows:
        rep.add(f"grad:{r['vertex']}", "gradient graph passes through the vertex", r["grad_error"] <= cfg.grad_tol,
                r["grad_error"], cfg.grad_tol)
        rep.add(f"hessian:{r['vertex']}", "prescribed vertex Hessian", r["hessian_error"] <= cfg.hessian_tol,
                r["hessian_error"], cfg.hessian_tol)
    with rep.stage("convexity"):
        lam_min = convex_min_eigenvalue(F, rng)
        X, Y = convexity_pairs(F, rng, cfg.convexity_pairs)
        v1 = midpoint_violations(lambda A: F.convex_part(A)[0], X, Y)
        X, Y = convexity_pairs(F, rng, cfg.convexity_pairs, q_extra=True)
        v2 = midpoint_violations(F.polyconvex_part, X, Y)
    rep.add("min_eigenvalue", "uniform convexity of the convex part", lam_min >= F.eps / 8, lam_min, F.eps / 8)
    rep.add("midpoint:convex_part", "midpoint convexity", v1 == 0, v1, 0)
    rep.add("midpoint:polyconvex_part", "midpoint convexity in (A, minor)", v2 == 0, v2, 0)
    out = _outdir(cfg)
    if out:
        (out / "energy.json").write_text(F.to_json() + "\n")
        with open(out / "vertices.csv", "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(_plain(rows))
    return rep, EXIT_NUMERIC


def run_embed(cfg: PipelineConfig) -> tuple[Report, int]:
    from .embedding import CertificateFailure, Embedder, embedding_checks, find_tau0, graph_residual_law, o5_constants
    from .param_family import reference_Zstar

    rep = Report("embed", cfg)
    Z = reference_Zstar(cfg.n)
    F, H, cert = witness_energy_or_identity(cfg, Z)
    emb = Embedder(F, Z, dps=cfg.dps if cfg.mode == "exact" else None)
    rng = np.random.default_rng(cfg.seed)
    with rep.stage("tau0"):
        try:
            tau0, sols = find_tau0(emb, floor=cfg.tau0_floor, rng=rng, samples=cfg.rho_samples)
        except CertificateFailure as ex:
            rep.add("tau0", "implicit embedding on a ball", False, None, cfg.tau0_floor, {"error": str(ex)})
            return rep, EXIT_NUMERIC
    rep.add("tau0", "implicit embedding on a ball", True, tau0, cfg.tau0_floor)
    if cert is None:
        from .nondegeneracy import certify

        cert = certify(Z, H)
    ratios = {i: cert.N[i] / cert.J[i] for i in range(1, 6)}
    with rep.stage("checks"):
        chk = embedding_checks(emb, ratios, tau0, sols, rng=np.random.default_rng(cfg.seed + 1))
    rep.add("newton_residual", "implicit system solved", chk["max_residual"] <= cfg.newton_tol, chk["max_residual"], cfg.newton_tol)
    rep.add("z_identity", "parameter consistency across base points", chk["z_relative"] <= cfg.identity_tol, chk["z_relative"], cfg.identity_tol)
    rep.add("pi_inverse", "inverse of the base-point map", chk["inverse_relative"] <= cfg.identity_tol, chk["inverse_relative"], cfg.identity_tol)
    for i, v in chk["det_relative"].items():
        rep.add(f"det:{i}", "determinant ratio at the origin", v <= cfg.det_tol, v, cfg.det_tol)
    if cfg.residual_law:
        with rep.stage("residual_law"):
            o5 = o5_constants(emb, rng=np.random.default_rng(cfg.seed), y_samples=2, tau0_floor=cfg.tau0_floor, tau0_result=(tau0, sols))
            law = graph_residual_law(emb, o5, cfg.lambdas)
        rep.add("residual_law", "residual linear in 1 - lambda", law.correlation >= cfg.correlation_min, law.correlation,
                cfg.correlation_min, {"bound_constant": law.bound_constant})
        out = _outdir(cfg)
        if out:
            with open(out / "residual_law.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["lambda", "one_minus_lambda", "sup_residual"])
                for lam, s in zip(law.lambdas, law.sups):
                    wr.writerow(_plain([lam, 1 - lam, s]))
            (out / "condition_o.json").write_text(json.dumps(_plain(o5.to_dict()), sort_keys=True) + "\n")
    return rep, EXIT_NUMERIC


def witness_energy_or_identity(cfg: PipelineConfig, Z):
    return _energy(cfg, Z)


def _default_gamma(n: int):
    from .foundation import MatPair

    first = np.zeros((1, n))
    first[0, 0] = 1.0
    second = np.zeros((1, n))
    second[0, 1] = 1.0
    return MatPair(first, second)


def _gamma(cfg: PipelineConfig):
    from .foundation import MatPair

    if cfg.gamma is None:
        return _default_gamma(cfg.n)
    try:
        return MatPair.of(cfg.gamma["first"], cfg.gamma["second"], exact=False)
    except (KeyError, ValueError, TypeError) as ex:
        raise ConfigError(f"gamma needs matrices first and second: {ex}") from ex


def _field_clauses(rep: Report, report, prefix: str = "") -> None:
    for c in report.clauses:
        rep.add(prefix + c["id"], "block verification", c["status"] == "PASS", c["value"], c["bound"],
                {k: v for k, v in c.items() if k not in ("id", "status", "value", "bound")} or None)


def run_wave(cfg: PipelineConfig) -> tuple[Report, int]:
    from .building_blocks import plane_wave, refinement_ratio, verify_field, dump_csv
    from .foundation import SpaceTimeBox

    rep = Report("wave", cfg)
    R = cfg.resolution or 128
    gamma = _gamma(cfg)
    G = SpaceTimeBox.unit(gamma.dims[1] + 1)
    with rep.stage("build"):
        fld = plane_wave(gamma, cfg.lam, G, cfg.eps, R)
    with rep.stage("verify"):
        vr = verify_field(fld)
    _field_clauses(rep, vr)
    if cfg.refine_resolution:
        with rep.stage("refine"):
            rr = refinement_ratio(fld, R, cfg.refine_resolution)
        for k, v in rr["ratio"].items():
            detail = {"coarse": rr["coarse"][k], "fine": rr["fine"][k]}
            if rr["coarse"][k] == 0 and rr["fine"][k] == 0:
                # the discrete divergence vanishes identically; no order to measure
                rep.add(f"order:{k}", "second-order finite differences", True, None, [3, 5], detail | {"exact": True})
                continue
            rep.add(f"order:{k}", "second-order finite differences", 3 <= v <= 5, v, [3, 5], detail)
    out = _outdir(cfg)
    if out:
        dump_csv(fld, out / "wave.csv", stride=cfg.csv_stride)
        (out / "wave_verification.json").write_text(vr.to_json() + "\n")
    return rep, EXIT_NUMERIC


def _spread_config(cfg: PipelineConfig):
    from .building_blocks import tn_config
    from .configurations import build_tn
    from .foundation import MatPair
    from .param_family import reference_Zstar

    if cfg.spread_config == "zstar":
        return tn_config(reference_Zstar(cfg.n))
    g = _default_gamma(cfg.n).to_exact()
    return build_tn(MatPair.zero(1, cfg.n), [g, -g], [2, 2])


def run_spread(cfg: PipelineConfig) -> tuple[Report, int]:
    from .building_blocks import dump_csv, tn_spread, verify_field
    from .foundation import SpaceTimeBox

    rep = Report("spread", cfg)
    R = cfg.resolution or 64
    tn = _spread_config(cfg)
    if not 1 <= cfg.spread_index <= tn.N:
        raise ConfigError(f"spread_index must lie in 1..{tn.N}")
    G = SpaceTimeBox.unit(tn.rho.dims[1] + 1)
    with rep.stage("build"):
        fld = tn_spread(tn, cfg.spread_index, cfg.lam, G, cfg.delta, R)
    with rep.stage("verify"):
        vr = verify_field(fld)
    _field_clauses(rep, vr)
    out = _outdir(cfg)
    if out:
        dump_csv(fld, out / "spread.csv", stride=cfg.csv_stride)
        (out / "spread_verification.json").write_text(vr.to_json() + "\n")
    return rep, EXIT_NUMERIC


def run_report(cfg: PipelineConfig) -> tuple[Report, int]:
    if not cfg.out:
        raise ConfigError("report needs --out pointing at a directory of command reports")
    rep = Report("report", cfg)
    found = 0
    code = EXIT_NUMERIC
    for name in ("certify", "construct-f", "embed", "wave", "spread"):
        p = Path(cfg.out) / f"{name}.json"
        if not p.exists():
            continue
        found += 1
        data = json.loads(p.read_text())
        for c in data["clauses"]:
            rep.add(f"{name}/{c['id']}", c["paper_ref"], c["status"] == "PASS", c["value"], c["bound"])
            if name == "certify" and c["status"] != "PASS":
                code = EXIT_CERT
    if not found:
        raise ConfigError(f"no command reports in {cfg.out}")
    rep.cfg = replace_out(cfg)
    return rep, code


def replace_out(cfg: PipelineConfig) -> PipelineConfig:
    # the summary never overwrites the per-command reports it reads
    from dataclasses import replace

    return replace(cfg, out=None)


# ---------------------------------------------------------------------------
# click surface


class _ExitCodeGroup(click.Group):
    """Maps usage errors to exit code 3 and command results to their exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args=args, prog_name=prog_name, complete_var=complete_var, standalone_mode=False, **extra)
        except click.UsageError as ex:
            ex.show()
            sys.exit(EXIT_USAGE)
        except click.Abort:
            sys.exit(EXIT_USAGE)
        sys.exit(rv if isinstance(rv, int) else EXIT_PASS)


_COMMON = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON config file"),
    click.option("--seed", type=int, default=None),
    click.option("--n", "n", type=int, default=None, help="column count n >= 2"),
    click.option("--resolution", type=int, default=None, help="raster cells per axis (power of two)"),
    click.option("--mode", type=click.Choice(["exact", "float"]), default=None),
    click.option("--out", type=click.Path(file_okay=False), default=None, help="directory for reports and dumps"),
    click.option("--no-timing", is_flag=True, default=False, help="omit wall-clock timings (byte-stable output)"),
]


def _common(f):
    for opt in reversed(_COMMON):
        f = opt(f)
    return f


def _run(name: str, runner, config_path, no_timing, **overrides) -> int:
    cfg = PipelineConfig.load(config_path, **overrides)
    if no_timing:
        cfg.timing = False
    try:
        rep, fail_code = runner(cfg)
    except ConfigError:
        raise
    except Exception as ex:  # numerical failures become a FAIL clause
        from .convex_builder import CompatibilityError

        rep = Report(name, cfg)
        rep.add("error", type(ex).__name__, False, str(ex), None)
        return _emit(rep, EXIT_CERT if isinstance(ex, CompatibilityError) else EXIT_NUMERIC)
    return _emit(rep, fail_code)


@click.group(cls=_ExitCodeGroup)
def cli():
    """Certificates, energy synthesis, implicit embedding and plane-wave blocks."""


@cli.command()
@_common
@click.option("--zero-cd", is_flag=True, default=None, help="replace the compatibility constants by zero")
def certify(config_path, no_timing, zero_cd, **kw):
    """Exact compatibility and nondegeneracy certificates at the reference parameter."""
    return _run("certify", run_certify, config_path, no_timing, zero_cd=zero_cd, **kw)


@cli.command("construct-f")
@_common
def construct_f(config_path, no_timing, **kw):
    """Build the polyconvex energy and check its vertex jets and convexity."""
    return _run("construct-f", run_construct_f, config_path, no_timing, **kw)


@cli.command()
@_common
def embed(config_path, no_timing, **kw):
    """Solve the implicit embedding and check its identities."""
    return _run("embed", run_embed, config_path, no_timing, **kw)


@cli.command()
@_common
@click.option("--refine", "refine_resolution", type=int, default=None, help="second resolution for the order check")
def wave(config_path, no_timing, **kw):
    """Localized plane wave on the unit box with full verification."""
    return _run("wave", run_wave, config_path, no_timing, **kw)


@cli.command()
@_common
def spread(config_path, no_timing, **kw):
    """T_N spreading block on the unit box with full verification."""
    return _run("spread", run_spread, config_path, no_timing, **kw)


@cli.command()
@_common
def report(config_path, no_timing, **kw):
    """Collect the command reports found in --out."""
    return _run("report", run_report, config_path, no_timing, **kw)


def main(argv=None) -> None:
    cli.main(args=argv, prog_name="tnkit")


if __name__ == "__main__":
    main()
