"""Command line: compile offline sets, simulate the closed loop, verify sets.

Exit codes: 0 success, 2 configuration error, 3 offline computation failure,
4 online infeasibility (or a run that breaks the contour tolerance),
5 verification failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contour import Arc, ContourError, Line, Tolerance, active_sector, parse_annulus
from .gantry import (Experiment, ExperimentError, GantryParams, build_experiment, simulate,
                     synthesize, terminal_ingredients, trace_to_csv)
from .invariance import parse_family, verify_family
from .mpc import MpcConfig, MpcError, MpcInfeasible
from .polytope import Polytope, PolytopeError, format_polytope, sample_uniform

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_OFFLINE, EXIT_ONLINE, EXIT_VERIFY = 0, 2, 3, 4, 5
OUT_ENV = "CONTOUR_MPC_OUT"

# section -> key -> parser; every key listed here is optional
_FLOAT = float
_INT = int


def _floats(n=None):
    def parse(s):
        vals = tuple(float(t) for t in s.replace(",", " ").split())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals
    return parse


SCHEMA = {
    "plant": {
        "T_s": _FLOAT, "x_travel": _FLOAT, "y_travel": _FLOAT, "boundaries": _floats(),
        "xbar": _floats(), "omega_hz": _floats(), "zeta": _FLOAT, "k1": _FLOAT, "k2": _FLOAT,
        "k3": _FLOAT, "u_max": _FLOAT, "v_max_state": _FLOAT, "theta_max": _FLOAT,
        "theta_rate_max": _FLOAT, "v_split": _FLOAT, "w_split": _FLOAT, "hysteresis": _FLOAT,
        "terminal_theta_weight": _floats(2),
    },
    "path": {"segments": str, "v_max": _FLOAT, "a_max": _FLOAT},
    "contour": {"eps_c": _FLOAT, "compare_slack": _FLOAT},
    "mpc": {"N": _INT, "Q": _floats(2), "R": _floats(3), "Q_s": _floats(2),
            "conv_tol": _FLOAT, "settle_cap": _INT},
    "run": {"seed": _INT, "output_dir": str, "verify_samples": _INT, "max_iter": _INT,
            "x0": _floats(6)},
}

DEFAULT_SEGMENTS = "line 0.08 -0.075 0.08 0; arc 0 0 0.08 0 360; line 0.08 0 0.08 0.075"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    plant: GantryParams
    segments: list
    v_max: float = 0.1
    a_max: float = 1.0
    eps_c: float = 0.004
    compare_slack: float | None = None
    N: int = 3
    Q: tuple = (1e5, 1e5)
    R: tuple = (1e-1, 1e-3, 1e-2)
    Q_s: tuple = (1.0, 1.0)
    conv_tol: float = 1e-4
    settle_cap: int = 5000
    seed: int = 0
    output_dir: str = "out"
    verify_samples: int = 1000
    max_iter: int = 200
    x0: tuple | None = None
    raw: dict = field(default_factory=dict)

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(N=self.N, Q=np.diag(self.Q), R=np.diag(self.R), U=self.plant.input_box(),
                         X=self.plant.state_box(), Q_s=np.diag(self.Q_s))

    def tolerance(self) -> Tolerance:
        return Tolerance(self.eps_c)

    def digest(self) -> str:
        """Hash of everything that shapes the offline sets."""
        keep = {"plant": repr(self.plant), "segments": repr(self.segments),
                "values": [self.v_max, self.a_max, self.eps_c, self.compare_slack, self.N,
                           self.Q, self.R, self.Q_s, self.max_iter]}
        return hashlib.sha256(json.dumps(keep).encode()).hexdigest()[:16]


def parse_segments(text: str) -> list:
    """``line x0 y0 x1 y1`` and ``arc xc yc R deg_start deg_end`` entries, ``;``-separated."""
    out = []
    for item in text.split(";"):
        tok = item.split()
        if not tok:
            continue
        kind, vals = tok[0].lower(), [float(t) for t in tok[1:]]
        if kind == "line" and len(vals) == 4:
            out.append(Line.through(vals[:2], vals[2:]))
        elif kind == "arc" and len(vals) == 5:
            out.append(Arc(vals[0], vals[1], vals[2], math.radians(vals[3]), math.radians(vals[4])))
        else:
            raise ConfigError(f"bad path segment {item.strip()!r}")
    if not out:
        raise ConfigError("path has no segments")
    return out


def load_config(path) -> RunConfig:
    """Read a ``key = value`` config with ``[section]`` headers; unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values: dict = {}
    raw: dict = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, text in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                values[(sec, key)] = SCHEMA[sec][key](text)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from exc
            raw.setdefault(sec, {})[key] = text.strip()
    plant_kw = {k: v for (s, k), v in values.items() if s == "plant"}
    try:
        plant = GantryParams(**plant_kw)
    except ValueError as exc:
        raise ConfigError(f"[plant] {exc}") from exc
    try:
        segments = parse_segments(values.get(("path", "segments"), DEFAULT_SEGMENTS))
    except (ValueError, ContourError) as exc:
        raise ConfigError(f"[path] {exc}") from exc
    kw = {k: v for (s, k), v in values.items() if s in ("path", "contour", "mpc", "run")
          and k != "segments"}
    cfg = RunConfig(plant=plant, segments=segments, raw=raw, **kw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if not cfg.eps_c > 0:
        raise ConfigError("eps_c must be positive")
    for seg in cfg.segments:
        if isinstance(seg, Arc) and cfg.eps_c >= seg.R_c:
            raise ConfigError(f"precondition violated: eps_c = {cfg.eps_c} must be smaller than "
                              f"the arc radius R_c = {seg.R_c}")
    if cfg.v_max <= 0 or cfg.a_max <= 0:
        raise ConfigError("v_max and a_max must be positive")
    if cfg.verify_samples < 0 or cfg.max_iter < 1 or cfg.settle_cap < 0 or cfg.conv_tol <= 0:
        raise ConfigError("[run]/[mpc] counts and tolerances out of range")
    try:
        cfg.mpc_config()
    except ValueError as exc:
        raise ConfigError(f"[mpc] {exc}") from exc


def output_dir(cfg: RunConfig, override: str | None = None) -> Path:
    return Path(override or os.environ.get(OUT_ENV) or cfg.output_dir)


# --- set files --------------------------------------------------------------

SETS_FILES = ("feasible.txt", "family.txt", "ladders.npy", "modes.txt", "summary.json")


def _write(path: Path, text: str):
    path.write_text(text)


def write_sets(exp: Experiment, cfg: RunConfig, config_path, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    feas = []
    for m, S in exp.feasible_sets().items():
        feas.append(f"mode {m}\n")
        feas.append(format_polytope(S))
    _write(out / "feasible.txt", "".join(feas))
    _write(out / "family.txt", exp.family.to_text())
    np.save(out / "ladders.npy", pack_ladders(exp.family.ladders))
    rows = ["# id segment region sector first count dwell"]
    for cm in exp.plan.modes:
        rows.append(f"{cm.mode_id} {cm.segment} {cm.region} {cm.sector or 0} {cm.first} "
                    f"{cm.count} {cm.dwell}")
    _write(out / "modes.txt", "\n".join(rows) + "\n")
    for i, ap in exp.annulus.items():
        _write(out / f"annulus_{i}.txt", ap.to_text())
    _write(out / "config.ini", Path(config_path).read_text())
    summary = {
        "digest": cfg.digest(),
        "modes": len(exp.plan.modes),
        "iterations": exp.family.iterations_used,
        "converged": bool(exp.family.converged),
        "family_facets": {str(m): int(P.b.size) for m, P in exp.family.sets.items()},
        "feasible_facets": {str(m): int(S.b.size) for m, S in exp.feasible_sets().items()},
        "ladder_depths": {str(m): len(v) - 1 for m, v in exp.family.ladders.items()},
        "annulus": {str(i): {"n_i": ap.n_i, "n_o": ap.n_o} for i, ap in exp.annulus.items()},
    }
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def pack_ladders(ladders: dict) -> np.ndarray:
    """Rows ``[mode, level, a_1..a_n, b]`` in one array (deterministic ``.npy`` bytes)."""
    blocks = []
    for m, levels in ladders.items():
        for j, P in enumerate(levels):
            A, b = (np.zeros((1, P.dim)), np.array([-1.0])) if P._empty_marker else (P.A, P.b)
            head = np.column_stack([np.full(b.size, float(m)), np.full(b.size, float(j))])
            blocks.append(np.hstack([head, A, b[:, None]]))
    return np.vstack(blocks) if blocks else np.zeros((0, 3))


def unpack_ladders(arr: np.ndarray) -> dict:
    out: dict = {}
    if arr.size == 0:
        return out
    dim = arr.shape[1] - 3
    for m in dict.fromkeys(arr[:, 0].astype(int).tolist()):
        rows = arr[arr[:, 0] == m]
        levels = []
        for j in range(int(rows[:, 1].max()) + 1):
            r = rows[rows[:, 1] == j]
            levels.append(Polytope(r[:, 2:2 + dim], r[:, -1], dim))
        out[m] = levels
    return out


def load_sets(exp: Experiment, sets_dir: Path, cfg: RunConfig):
    """Attach stored family/ladders to ``exp`` and recompute terminal ingredients."""
    summary = json.loads((sets_dir / "summary.json").read_text())
    if summary.get("digest") != cfg.digest():
        raise ConfigError(f"sets in {sets_dir} were compiled from a different configuration")
    with open(sets_dir / "family.txt") as fh:
        fam = parse_family(fh, mode_type=int)
    fam.ladders = unpack_ladders(np.load(sets_dir / "ladders.npy"))
    if set(fam.sets) != set(exp.graph.modes):
        raise ConfigError(f"sets in {sets_dir} do not match the mode graph")
    exp.family = fam
    exp.terminals = terminal_ingredients(exp)
    return exp


def _build(cfg: RunConfig) -> Experiment:
    tol = cfg.tolerance()
    return build_experiment(cfg.plant, cfg.segments, tol, cfg.mpc_config(), cfg.v_max, cfg.a_max,
                            compare_slack=cfg.compare_slack)


def _compile(cfg: RunConfig, config_path, out: Path) -> tuple[Experiment, dict]:
    exp = _build(cfg)
    synthesize(exp, max_iter=cfg.max_iter)
    summary = write_sets(exp, cfg, config_path, out)
    return exp, summary


# --- commands ---------------------------------------------------------------

def cmd_sets(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(cfg, args.out) / "sets"
    _, summary = _compile(cfg, args.config, out)
    report = {k: summary[k] for k in ("modes", "iterations", "converged", "annulus",
                                      "family_facets")}
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(cfg, args.out)
    sets_dir = Path(args.sets) if args.sets else out / "sets"
    exp = _build(cfg)
    if (sets_dir / "summary.json").exists() and _digest_matches(sets_dir, cfg):
        try:
            load_sets(exp, sets_dir, cfg)
        except MpcError as exc:
            raise ExperimentError("terminal ingredients", str(exc)) from exc
    elif args.sets:
        raise ConfigError(f"no usable sets in {sets_dir}")
    else:
        synthesize(exp, max_iter=cfg.max_iter)
        write_sets(exp, cfg, args.config, sets_dir)
    out.mkdir(parents=True, exist_ok=True)
    x0 = np.asarray(cfg.x0) if cfg.x0 is not None else None
    try:
        trace = simulate(exp, x0=x0, settle_cap=cfg.settle_cap, conv_tol=cfg.conv_tol)
    except MpcInfeasible as exc:
        print(f"error: online infeasibility at k = {exc.k}: {exc}", file=sys.stderr)
        if exc.trace is not None and len(exc.trace):
            (out / "trace.csv").write_text(trace_to_csv(exc.trace))
        return EXIT_ONLINE
    (out / "trace.csv").write_text(trace_to_csv(trace))
    s = trace.summary()
    lines = [f"steps {s['steps']}", f"max_eps {s['max_eps']:.12g}",
             f"max_err_x {s['max_err_x']:.12g}", f"max_err_y {s['max_err_y']:.12g}",
             f"switches {s['switches']}", f"infeasible {s['infeasible']}",
             f"eps_c {cfg.eps_c:.12g}"]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.plots:
        from .plots import render_trace

        for p in render_trace(trace, exp.path, out, cfg.eps_c):
            print(f"figure {p}")
    if s["infeasible"] or s["max_eps"] > cfg.eps_c:
        print(f"error: max contouring error {s['max_eps']:.6g} exceeds eps_c {cfg.eps_c:.6g}",
              file=sys.stderr)
        return EXIT_ONLINE
    return EXIT_OK


def _digest_matches(sets_dir: Path, cfg: RunConfig) -> bool:
    try:
        return json.loads((sets_dir / "summary.json").read_text()).get("digest") == cfg.digest()
    except (OSError, ValueError):
        return False


def annulus_check(ap, n_samples: int, seed: int):
    """Sampled soundness of every sector plus coverage of 720 circle points."""
    bad = []
    rng = np.random.default_rng(seed)
    for p, sec in enumerate(ap.sectors):
        if n_samples <= 0:
            break
        pts = sample_uniform(sec, n_samples, seed=int(rng.integers(2**31)))
        r = np.linalg.norm(pts - ap.center, axis=1)
        dev = np.abs(r - ap.R_c)
        k = int(np.argmax(dev))
        if dev[k] > ap.eps_c + 1e-9:
            bad.append(f"sector {p + 1}: point {pts[k].tolist()} is {dev[k]:.6g} from the circle")
    for a in np.linspace(0, 2 * math.pi, 720, endpoint=False):
        q = ap.center + ap.R_c * np.array([math.cos(a), math.sin(a)])
        try:
            active_sector(q, ap)
        except ContourError:
            bad.append(f"circle point {q.tolist()} is not covered")
    return bad


def cmd_verify(args) -> int:
    sets_dir = Path(args.setsdir)
    cfg = load_config(sets_dir / "config.ini")
    exp = _build(cfg)
    try:
        with open(sets_dir / "family.txt") as fh:
            fam = parse_family(fh, mode_type=int)
    except (OSError, PolytopeError, ValueError, StopIteration) as exc:
        raise ConfigError(f"cannot read family from {sets_dir}: {exc}") from exc
    samples = cfg.verify_samples if args.samples is None else args.samples
    seed = cfg.seed if args.seed is None else args.seed
    problems = []
    for i in exp.annulus:
        f = sets_dir / f"annulus_{i}.txt"
        if not f.exists():
            problems.append(f"missing {f.name}")
            continue
        with open(f) as fh:
            ap = parse_annulus(fh)
        ap.center = exp.annulus[i].center
        problems += annulus_check(ap, samples, seed)
    rep = verify_family(fam, list(exp.synth_models.values()), exp.graph,
                        exp.params.split_input_box(), n_samples=samples, seed=seed,
                        workers=args.workers)
    for v in rep.violations:
        w = None if v.witness is None else np.asarray(v.witness).tolist()
        problems.append(f"{v.kind} mode {v.mode} edge {v.edge}: {v.detail}; witness {w}")
    print(f"checked {rep.samples_checked} samples, {rep.edges_checked} edges")
    if problems:
        for p in problems:
            print(f"violation: {p}", file=sys.stderr)
        return EXIT_VERIFY
    print("ok")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contour-mpc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("sets", help="compile feasible sets and the switch CI family")
    s.add_argument("config")
    s.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else the config value)")
    s.set_defaults(func=cmd_sets)
    s = sub.add_parser("simulate", help="run the closed loop and write trace.csv")
    s.add_argument("config")
    s.add_argument("--sets", help="directory of compiled sets")
    s.add_argument("--out")
    s.add_argument("--plots", action="store_true", help="also render PNG figures (matplotlib)")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("verify", help="certify compiled sets")
    s.add_argument("setsdir")
    s.add_argument("--samples", type=int, help="invariance samples per mode (else the config value)")
    s.add_argument("--seed", type=int, help="sampling seed (else the config value)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        code = EXIT_CONFIG if exc.stage in ("reference",) else EXIT_OFFLINE
        print(f"offline failure in {exc}", file=sys.stderr)
        return code
    except MpcError as exc:
        print(f"offline failure: {exc}", file=sys.stderr)
        return EXIT_OFFLINE


if __name__ == "__main__":
    sys.exit(main())
