"""Command-line entry point: ``x0lab {identity-check,sample,train,compare,maucc}``.

Every subcommand takes ``--seed``, ``--out-dir`` and ``--config``. The config is
an INI file (one section per subcommand); explicit flags override its keys.
Before computing anything, each run writes ``manifest.ini`` into the output
directory. The manifest is itself a valid config, so
``x0lab <cmd> --config manifest.ini`` replays the run and rewrites identical CSVs.

Exit codes: 0 success, 2 identity violation, 3 training divergence,
4 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import TrainingDivergence, X0LabError
from .forward import PRNG_ALGORITHM
from .identities import algebra_identities, gradient_identity
from .metrics import (
    DEFAULT_HORIZONS,
    DIRECTIONS,
    ConvergenceCurve,
    MauccConfig,
    aucc_table,
    ema_smooth,
    format_value,
    maucc,
    read_curve_csv,
    summarize,
    write_curve_csv,
)
from .oracle import GaussianData, make_predictor
from .sampler import SAMPLER_KINDS, SamplerConfig, sample
from .schedule import get_schedule
from .svg import write_chart
from .toytrainer import SUPERVISIONS, ToyTask, TrainConfig, train

EXIT_OK, EXIT_IDENTITY, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
MANIFEST = "manifest.ini"
MANIFEST_HEADER = "# manifest\n"

log = logging.getLogger("x0lab")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with the identity-violation code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


# -- config handling -------------------------------------------------------

def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_list(v: str, cast=str) -> list:
    return [cast(x.strip()) for x in v.split(",") if x.strip()]


def _coerce(value: str, like):
    """Parse ``value`` to the type of the default ``like``."""
    if isinstance(like, bool):
        return _parse_bool(value)
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, (list, tuple)):
        cast = type(like[0]) if like else str
        return _parse_list(value, cast)
    if like is None:
        return None if value.strip().lower() in ("", "none", "auto") else value.strip()
    return value.strip()


def _to_text(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_value(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_to_text(x) for x in v)
    return str(v)


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    if path is None:
        return cp
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        cp.read_string(text, source=str(p))
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    return cp


def resolve(defaults: dict, cp: configparser.ConfigParser, section: str, args: argparse.Namespace) -> dict:
    """Defaults, then config keys, then explicit command-line flags."""
    out = dict(defaults)
    if cp.has_section(section):
        for key, raw in cp.items(section):
            if key not in out:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                out[key] = _coerce(raw, defaults[key])
            except ValueError as e:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from e
    for key in out:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def manifest_text(command: str, sections: dict[str, dict], outputs: list[str]) -> str:
    """Deterministic manifest: config sections, then a ``[run]`` block with the content hash."""
    cp = configparser.ConfigParser(interpolation=None)
    for name, values in sections.items():
        cp[name] = {k: _to_text(v) for k, v in values.items()}
    buf = io.StringIO()
    cp.write(buf)
    body = buf.getvalue()
    # git blob hash of the config body
    data = body.encode("utf-8")
    digest = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
    run = configparser.ConfigParser(interpolation=None)
    run["run"] = {
        "command": command,
        "version": __version__,
        "prng": PRNG_ALGORITHM,
        "config_hash": digest,
        "outputs": ",".join(outputs),
    }
    buf = io.StringIO()
    run.write(buf)
    return MANIFEST_HEADER + body + buf.getvalue()


def write_manifest(out_dir: Path, command: str, sections: dict[str, dict], outputs: list[str]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST
    path.write_bytes(manifest_text(command, sections, outputs).encode("utf-8"))
    return path


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_value(x) if isinstance(x, float) else x for x in r])
    path.write_bytes(buf.getvalue().encode("ascii"))


# -- subcommands -----------------------------------------------------------

IDENTITY_DEFAULTS = {
    "schedules": ["vp_cosine", "ot_flow"],
    "n_random": 10000,
    "tol": 1e-9,
    "grad_batches": 100,
    "seed": 0,
}


def cmd_identity_check(args, cp) -> int:
    cfg = resolve(IDENTITY_DEFAULTS, cp, "identity", args)
    out_dir = Path(args.out_dir)
    write_manifest(out_dir, "identity-check", {"identity": cfg}, ["identities.csv"])
    if cfg["n_random"] <= 0:
        log.warning("n_random=0: no instances checked, pass is vacuous")
    rows, failed = [], False
    for name in cfg["schedules"]:
        s = get_schedule(name)
        results = algebra_identities(s, cfg["n_random"], cfg["seed"])
        if s.vp and cfg["n_random"] > 0:
            results.append(gradient_identity(s, cfg["grad_batches"], cfg["seed"]))
        for r in results:
            ok = r.ok(cfg["tol"])
            failed |= not ok
            rows.append((name, r.name, r.n, r.worst, cfg["tol"] * r.tol_scale, "pass" if ok else "FAIL"))
    _write_csv(out_dir / "identities.csv", ["schedule", "identity", "n", "worst_rel_err", "tol", "status"], rows)
    width = max((len(r[1]) for r in rows), default=10)
    for sched, name, _, worst, tol, status in rows:
        print(f"{sched:<10} {name:<{width}}  worst={worst:.3e}  tol={tol:.1e}  {status}")
    if not rows:
        print("no identities checked (n_random=0): vacuous pass")
    return EXIT_IDENTITY if failed else EXIT_OK


SAMPLE_DEFAULTS = {
    "schedule": "vp_cosine",
    "kind": "ddim",
    "n_steps": 50,
    "n_chains": 1000,
    "dim": 8,
    "data_mean": 0.0,
    "data_var": 1.0,
    "predictor_kind": "x0",
    "seed": 0,
}


def cmd_sample(args, cp) -> int:
    """Sample the Gaussian-oracle model and write one row per chain."""
    cfg = resolve(SAMPLE_DEFAULTS, cp, "sample", args)
    out_dir = Path(args.out_dir)
    write_manifest(out_dir, "sample", {"sample": cfg}, ["samples.csv"])
    s = get_schedule(cfg["schedule"])
    d = cfg["dim"]
    data = GaussianData(np.full(d, cfg["data_mean"]), np.full(d, cfg["data_var"]))
    scfg = SamplerConfig(cfg["kind"], cfg["n_steps"], seed=cfg["seed"])
    x = sample(make_predictor(data, s, cfg["predictor_kind"]), scfg, s, (cfg["n_chains"], d))
    _write_csv(out_dir / "samples.csv", ["chain"] + [f"x{i}" for i in range(d)], ([i] + [float(v) for v in row] for i, row in enumerate(x)))
    print(f"wrote {cfg['n_chains']} samples to {out_dir / 'samples.csv'}")
    print("mean " + " ".join(f"{m:+.4f}" for m in x.mean(axis=0)))
    print("var  " + " ".join(f"{v:.4f}" for v in x.var(axis=0, ddof=1)))
    return EXIT_OK


def _train_defaults() -> dict:
    return {f.name: f.default for f in fields(TrainConfig)}


TASK_DEFAULTS = {"image_side": 16, "texture_amp": 0.25, "task_seed": 0}


def _task(cfg: dict) -> ToyTask:
    return ToyTask(image_side=cfg["image_side"], texture_amp=cfg["texture_amp"], seed=cfg["task_seed"])


def _progress(prefix: str):
    def report(step, loss, iou):
        if iou is not None:
            log.info("%s step %d loss %.5g iou %.2f", prefix, step, loss, iou)

    return report


def cmd_train(args, cp) -> int:
    cfg = resolve(_train_defaults(), cp, "train", args)
    task_cfg = resolve(TASK_DEFAULTS, cp, "task", args)
    out_dir = Path(args.out_dir)
    write_manifest(out_dir, "train", {"train": cfg, "task": task_cfg}, ["curve.csv"])
    tcfg = TrainConfig(**cfg)
    try:
        _, curve = train(tcfg, _task(task_cfg), progress=_progress(tcfg.supervision))
    except TrainingDivergence as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    write_curve_csv(curve, out_dir / "curve.csv")
    final = curve.values[-1] if len(curve) else float("nan")
    score = maucc(curve) if len(curve) else float("nan")
    print(f"{tcfg.supervision} seed={tcfg.seed}: final mask IoU {final:.2f}, mAUCC {score:.3f}")
    return EXIT_OK


COMPARE_DEFAULTS = {"supervisions": ["eps", "x0_from_native"], "seeds": [1, 2, 3]}


def _arm_file(i: int, sup: str, seed: int) -> str:
    return f"arm{i}_{sup}_seed{seed}.csv"


def cmd_compare(args, cp) -> int:
    cmp_cfg = resolve(COMPARE_DEFAULTS, cp, "compare", args)
    if args.seed is not None and args.seeds is None:
        cmp_cfg["seeds"] = [args.seed]
    cfg = resolve(_train_defaults(), cp, "train", args)
    task_cfg = resolve(TASK_DEFAULTS, cp, "task", args)
    sups, seeds = cmp_cfg["supervisions"], cmp_cfg["seeds"]
    if len(sups) < 2:
        raise ConfigError("compare needs at least two supervisions")
    for sup in sups:
        if sup not in SUPERVISIONS:
            raise ConfigError(f"unknown supervision {sup!r}")
    out_dir = Path(args.out_dir)
    arm_files = [_arm_file(i, sup, seed) for i, sup in enumerate(sups) for seed in seeds]
    cfg.pop("supervision")
    cfg.pop("seed")
    write_manifest(
        out_dir, "compare", {"compare": cmp_cfg, "train": cfg, "task": task_cfg}, arm_files + ["summary.csv", "curves.svg"]
    )
    task = _task(task_cfg)
    table, series, diverged = [], [], False
    for i, sup in enumerate(sups):
        finals, scores, failures = [], [], 0
        for seed in seeds:
            tcfg = TrainConfig(supervision=sup, seed=seed, **cfg)
            try:
                _, curve = train(tcfg, task, progress=_progress(f"{sup}/{seed}"))
            except (TrainingDivergence, X0LabError) as e:
                log.error("arm %s seed %d failed: %s", sup, seed, e)
                failures += 1
                diverged = True
                continue
            write_curve_csv(curve, out_dir / _arm_file(i, sup, seed))
            if len(curve):
                finals.append(curve.values[-1])
                scores.append(maucc(curve))
                series.append((f"{sup} s{seed}", curve.steps, curve.values))
        row = [i, sup, len(finals), failures]
        for vals in (finals, scores):
            row += list(summarize(vals)) if vals else [float("nan")] * 3
        table.append(row)
    header = ["arm", "supervision", "runs", "failed", "final_mean", "final_min", "final_max", "maucc_mean", "maucc_min", "maucc_max"]
    _write_csv(out_dir / "summary.csv", header, table)
    if series:
        write_chart(out_dir / "curves.svg", series, title="held-out mask IoU", xlabel="training step", ylabel="mask IoU")
    print(f"{'supervision':<16} {'runs':>4}  {'final IoU (mean [min, max])':<30} {'mAUCC (mean [min, max])'}")
    for r in table:
        print(f"{r[1]:<16} {r[2]:>4}  {r[4]:7.2f} [{r[5]:.2f}, {r[6]:.2f}]{'':8} {r[7]:7.3f} [{r[8]:.3f}, {r[9]:.3f}]")
    return EXIT_DIVERGENCE if diverged else EXIT_OK


MAUCC_DEFAULTS = {
    "csv": "",
    "max_value": 100.0,
    "ema": 0.9,
    "horizons": list(DEFAULT_HORIZONS),
    "direction": "higher_better",
    "t_max": 0.0,
    "svg": "",
}


def cmd_maucc(args, cp) -> int:
    cfg = resolve(MAUCC_DEFAULTS, cp, "maucc", args)
    if not cfg["csv"]:
        raise ConfigError("maucc needs a curve CSV")
    if cfg["direction"] not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}")
    out_dir = Path(args.out_dir)
    write_manifest(out_dir, "maucc", {"maucc": cfg}, ["aucc.csv"])
    try:
        curve = read_curve_csv(cfg["csv"], cfg["max_value"], cfg["direction"])
    except OSError as e:
        raise ConfigError(f"cannot read {cfg['csv']}: {e}") from e
    mcfg = MauccConfig(tuple(cfg["horizons"]), cfg["ema"])
    t_max = cfg["t_max"] or None
    table = aucc_table(curve, mcfg, t_max)
    score = maucc(curve, mcfg, t_max)
    _write_csv(out_dir / "aucc.csv", ["horizon", "aucc"], [(float(h), float(a)) for h, a in table])
    print(f"{'horizon':>8}  AUCC")
    for h, a in table:
        print(f"{h:8.2f}  {a:.6f}")
    arrow = "higher is better" if cfg["direction"] == "higher_better" else "lower is better"
    print(f"mAUCC = {score:.6f}  ({arrow})")
    if cfg["svg"]:
        smooth = ema_smooth(curve, cfg["ema"])
        write_chart(
            cfg["svg"],
            [("raw", curve.steps, curve.values), (f"EMA {cfg['ema']:g}", smooth.steps, smooth.values)],
            title=f"{curve.metric_name}: mAUCC {score:.3f}",
            ylabel=curve.metric_name,
        )
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    p.add_argument("--out-dir", default=".", help="directory for manifest and outputs")
    p.add_argument("--config", default=None, help="INI config file (a previous manifest works)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="x0lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"x0lab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("identity-check", help="randomized checks of conversion and weighting identities")
    _common(p)
    p.add_argument("--schedule", dest="schedules", type=lambda v: _parse_list(v), default=None, help="comma list")
    p.add_argument("--n-random", dest="n_random", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--grad-batches", dest="grad_batches", type=int, default=None)
    p.set_defaults(func=cmd_identity_check)

    p = sub.add_parser("sample", help="sample the Gaussian-oracle model")
    _common(p)
    p.add_argument("--schedule", default=None)
    p.add_argument("--sampler", dest="kind", choices=SAMPLER_KINDS, default=None)
    p.add_argument("--n-steps", dest="n_steps", type=int, default=None)
    p.add_argument("--n-chains", dest="n_chains", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--data-mean", dest="data_mean", type=float, default=None)
    p.add_argument("--data-var", dest="data_var", type=float, default=None)
    p.add_argument("--predictor-kind", dest="predictor_kind", choices=("x0", "eps", "v", "u"), default=None)
    p.set_defaults(func=cmd_sample)

    for name, func, hlp in (("train", cmd_train, "train one arm on the mask task"), ("compare", cmd_compare, "train several arms and compare")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        if name == "train":
            p.add_argument("--supervision", choices=SUPERVISIONS, default=None)
        else:
            p.add_argument("--supervisions", type=lambda v: _parse_list(v), default=None, help="comma list")
            p.add_argument("--seeds", type=lambda v: _parse_list(v, int), default=None, help="comma list")
        p.add_argument("--native-kind", dest="native_kind", choices=("eps", "u"), default=None)
        p.add_argument("--schedule", default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
        p.add_argument("--image-side", dest="image_side", type=int, default=None)
        p.add_argument("--task-seed", dest="task_seed", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("maucc", help="AUCC table and mAUCC of a curve CSV")
    _common(p)
    p.add_argument("csv", nargs="?", default=None, help="CSV with step,value columns")
    p.add_argument("--max-value", dest="max_value", type=float, default=None)
    p.add_argument("--ema", type=float, default=None)
    p.add_argument("--horizons", type=lambda v: _parse_list(v, float), default=None, help="comma list of fractions")
    p.add_argument("--direction", choices=DIRECTIONS, default=None)
    p.add_argument("--t-max", dest="t_max", type=float, default=None)
    p.add_argument("--svg", default=None, help="write raw vs smoothed plot here")
    p.set_defaults(func=cmd_maucc)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cp = load_config(args.config)
        return args.func(args, cp)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, X0LabError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
