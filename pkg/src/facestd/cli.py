"""Command-line interface: ``facestd <command> [options]``.

Every command accepts ``--config FILE.json`` holding a flat object of option
names (dashes or underscores).  Values given on the command line win over
the config file, which wins over the built-in defaults; unknown config keys
are rejected.  Relative paths from a config file are resolved against the
file's directory, relative paths from flags against the working directory.

Exit status: 0 on success, 1 on a surfaced error, 2 on a usage error and 3
when the estimator diverged (outputs are still written and flagged).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import FacestdError, FitDegenerateError
from .geometry import RigidTransform, geodesic_angle_deg
from .metrics import evaluate
from .phantom import SHAPES, PhantomSpec, generate_phantom
from .pipeline import (
    INIT_MAX_ANGLE,
    INIT_MAX_TRANS,
    GradientDescentEstimator,
    LossWeights,
    OracleEstimator,
    standardize,
)
from .planes import fit_orthogonal_planes, planes_to_gt_transform
from .sampler import sample_center_slices
from .volume import extract_center_slices

PHANTOM_FILES = ("volume.vvol", "landmarks.csv", "membership.csv", "gt_transform.txt", "manifest.txt")
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _triple(text):
    parts = [p for p in str(text).replace(",", " ").split() if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _widths(text):
    try:
        values = tuple(float(p) for p in str(text).replace(",", " ").split())
    except ValueError:
        values = ()
    if not values or any(not v >= 0 for v in values):
        raise argparse.ArgumentTypeError(f"expected comma-separated non-negative widths, got {text!r}")
    return values


def _dims(text):
    values = _triple(text)
    if any(v != int(v) or v < 2 for v in values):
        raise argparse.ArgumentTypeError(f"dims must be integers >= 2, got {text!r}")
    return tuple(int(v) for v in values)


class _Command:
    """A subparser plus the bookkeeping needed for config-file merging."""

    def __init__(self, sub, name, handler, help_text):
        self.parser = sub.add_parser(name, help=help_text, description=help_text)
        self.parser.set_defaults(_handler=handler, _command=name)
        self.parser.add_argument("--config", type=Path, help="JSON file of option defaults")
        self.paths = set()
        self.required = []
        self.types = {}

    def add(self, flag, *, path=False, required=False, **kwargs):
        action = self.parser.add_argument(flag, **kwargs)
        if path:
            self.paths.add(action.dest)
        if required:
            self.required.append((action.dest, flag))
        self.types[action.dest] = action
        return action


def _figure_flag(cmd):
    cmd.add("--no-figures", dest="figures", action="store_false", help="skip the PNG figures")


def build_parser():
    parser = argparse.ArgumentParser(prog="facestd", description="Rigid standardization of 3-D head volumes.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    commands = {}

    c = _Command(sub, "phantom-gen", cmd_phantom_gen, "generate a synthetic phantom with ground truth")
    c.add("--out", path=True, default=Path("phantom"), type=Path, help="output directory (default: phantom)")
    c.add("--size", type=int, default=128, help="cubic volume edge in voxels (default: 128)")
    c.add("--spacing", type=float, default=0.5, help="isotropic voxel spacing in mm (default: 0.5)")
    c.add("--pose-euler", type=_triple, default=(0.0, 0.0, 0.0), help="pose angles x,y,z in degrees")
    c.add("--pose-trans", type=_triple, default=(0.0, 0.0, 0.0), help="pose translation in normalized units")
    c.add("--noise", type=float, default=0.0, help="additive Gaussian noise sigma (default: 0)")
    c.add("--seed", type=int, default=0, help="noise seed (default: 0)")
    c.add("--shape", choices=sorted(SHAPES), default="face", help="phantom shape (default: face)")
    commands[c.parser.prog] = c

    c = _Command(sub, "fit-planes", cmd_fit_planes, "fit three orthogonal planes to landmarks")
    c.add("--landmarks", path=True, required=True, type=Path, help="landmark CSV (id,x,y,z)")
    c.add("--membership", path=True, required=True, type=Path, help="membership CSV (id,planes)")
    c.add("--volume", path=True, type=Path, help="volume whose dims define the normalized frame")
    c.add("--dims", type=_dims, help="volume dims H,W,D when no --volume is given")
    c.add("--out", path=True, default=Path("planes"), type=Path, help="output directory (default: planes)")
    commands[c.parser.prog] = c

    for name, help_text in (
        ("standardize", "standardize a volume with a pose estimator"),
        ("recover-pose", "standardize with the gradient-descent estimator"),
    ):
        c = _Command(sub, name, cmd_standardize, help_text)
        c.add("--volume", path=True, required=True, type=Path, help="input VVOL volume")
        if name == "standardize":
            c.add("--estimator", choices=("oracle", "gradient-descent"), default="oracle", help="pose estimator (default: oracle)")
        else:
            c.parser.set_defaults(estimator="gradient-descent")
        c.add("--gt", path=True, type=Path, help="ground-truth transform document")
        c.add("--target", path=True, type=Path, help="directory of target slices (extract-slices output)")
        c.add("--out", path=True, default=Path("standardized"), type=Path, help="output directory")
        c.add("--n-iters", type=int, default=3, help="refinement iterations (default: 3)")
        c.add("--seed", type=int, default=0, help="initialization seed (default: 0)")
        c.add("--max-angle", type=float, default=INIT_MAX_ANGLE, help="initial perturbation bound in degrees")
        c.add("--max-trans", type=float, default=INIT_MAX_TRANS, help="initial translation bound, normalized")
        c.add("--noise-deg", type=float, default=0.0, help="oracle angle noise in degrees")
        c.add("--noise-trans", type=float, default=0.0, help="oracle translation noise, normalized")
        c.add("--beta", type=float, default=1.0, help="translation loss weight (default: 1)")
        c.add("--gamma", type=float, default=1.0, help="rotation loss weight (default: 1)")
        c.add("--steps", type=int, default=300, help="gradient steps per iteration (default: 300)")
        c.add("--step-size", type=float, default=0.01, help="initial gradient step size (default: 0.01)")
        c.add("--smoothing", type=_widths, default=(2.0, 0.0), help="Gaussian widths in voxels, coarse to fine (default: 2,0)")
        c.add("--no-backtracking", dest="backtracking", action="store_false", help="take every gradient step")
        _figure_flag(c)
        commands[c.parser.prog] = c

    c = _Command(sub, "evaluate", cmd_evaluate, "compare estimated and ground-truth transforms")
    c.add("--est", path=True, type=Path, help="estimated transform document")
    c.add("--gt", path=True, type=Path, help="ground-truth transform document")
    c.add("--volume", path=True, type=Path, help="volume used for slice metrics and mm scaling")
    c.add("--batch", path=True, type=Path, help="CSV with columns case,est,gt,volume")
    c.add("--out", path=True, default=Path("evaluation"), type=Path, help="output directory")
    _figure_flag(c)
    commands[c.parser.prog] = c

    c = _Command(sub, "extract-slices", cmd_extract_slices, "write the three center slices as PGM")
    c.add("--volume", path=True, required=True, type=Path, help="input VVOL volume")
    c.add("--out", path=True, default=Path("slices"), type=Path, help="output directory")
    commands[c.parser.prog] = c

    parser._facestd_commands = commands
    return parser


def _config_value(action, value):
    if action.type is not None and isinstance(value, str):
        return action.type(value)
    if action.type in (_triple, _dims, _widths) and isinstance(value, (list, tuple)):
        return action.type(",".join(str(v) for v in value))
    if action.type is Path and value is not None:
        return Path(value)
    return value


def _apply_config(cmd, config_path):
    try:
        config = json.loads(config_path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {config_path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise UsageError(f"config {config_path} must hold a JSON object")
    base = config_path.resolve().parent
    defaults = {}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in cmd.types or dest == "config":
            raise UsageError(f"config {config_path}: unknown key {key!r} for {cmd.parser.prog}")
        action = cmd.types[dest]
        try:
            value = _config_value(action, value)
        except (argparse.ArgumentTypeError, ValueError, TypeError) as exc:
            raise UsageError(f"config {config_path}: bad value for {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config {config_path}: {key!r} must be one of {list(action.choices)}")
        if dest in cmd.paths and value is not None and not value.is_absolute():
            value = base / value
        defaults[dest] = value
    cmd.parser.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    cmd = parser._facestd_commands[f"{parser.prog} {args._command}"]
    if args.config is not None:
        _apply_config(cmd, args.config)
        args = parser.parse_args(argv)
    for dest, flag in cmd.required:
        if getattr(args, dest) is None:
            raise UsageError(f"{args._command}: {flag} is required")
    for dest in cmd.paths:
        value = getattr(args, dest)
        if value is not None:
            setattr(args, dest, Path(value).resolve())
    return args


def _need_file(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not path.is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return path


def _transform_entries(prefix, transform):
    return {
        f"{prefix}rotation": io._join(transform.rotation),
        f"{prefix}translation": io._join(transform.translation),
        f"{prefix}quaternion": io._join(transform.quaternion),
    }


def _warn(message):
    print(f"facestd: {message}", file=sys.stderr)


# -- commands ----------------------------------------------------------------


def cmd_phantom_gen(args):
    pose = RigidTransform.from_euler(args.pose_euler, args.pose_trans)
    spec = PhantomSpec(
        dims=(args.size,) * 3,
        spacing=(args.spacing,) * 3,
        pose=pose,
        noise_sigma=args.noise,
        seed=args.seed,
        shape=args.shape,
    )
    bundle = generate_phantom(spec)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    io.write_vvol(out / "volume.vvol", bundle.volume)
    io.write_landmarks(out / "landmarks.csv", bundle.landmarks)
    io.write_membership(out / "membership.csv", bundle.membership)
    io.write_transform(out / "gt_transform.txt", bundle.gt_transform)
    manifest = {
        "command": "phantom-gen",
        "shape": args.shape,
        "dims": spec.dims,
        "spacing": spec.spacing,
        "pose_euler_deg": args.pose_euler,
        "pose_translation": args.pose_trans,
        "noise_sigma": args.noise,
        "seed": args.seed,
        "peak_intensity": float(bundle.volume.data.max()),
    }
    manifest.update(_transform_entries("gt_", bundle.gt_transform))
    io.write_manifest(out / "manifest.txt", manifest)
    return EXIT_OK


def cmd_fit_planes(args):
    _need_file(args.landmarks, "--landmarks")
    _need_file(args.membership, "--membership")
    if args.volume is not None:
        dims = io.read_vvol(_need_file(args.volume, "--volume")).dims
    elif args.dims is not None:
        dims = args.dims
    else:
        raise UsageError("fit-planes needs --volume or --dims to define the normalized frame")
    landmarks = io.read_landmarks(args.landmarks)
    membership = io.read_membership(args.membership)
    try:
        fit = fit_orthogonal_planes(landmarks, membership)
    except FitDegenerateError as exc:
        details = ", ".join(f"{k}={v}" for k, v in sorted(exc.diagnostics.items(), key=str))
        _warn(f"degenerate landmark configuration: {exc}" + (f" ({details})" if details else ""))
        return EXIT_ERROR
    transform = planes_to_gt_transform(fit.planes, dims)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    io.write_planes(out / "planes.txt", fit.planes)
    io.write_transform(out / "gt_transform.txt", transform)
    io.write_residuals(out / "residuals.csv", fit.residuals)
    io.write_manifest(
        out / "manifest.txt",
        {
            "command": "fit-planes",
            "landmarks": len(landmarks),
            "dims": dims,
            "objective": fit.objective,
            "iterations": fit.iterations,
            "max_residual": max(abs(v) for v in fit.residuals.values()),
        },
    )
    return EXIT_OK


def cmd_standardize(args):
    volume = io.read_vvol(_need_file(args.volume, "--volume"))
    gt = io.read_transform(_need_file(args.gt, "--gt")) if args.gt is not None else None
    if args.estimator == "oracle":
        if gt is None:
            raise UsageError("the oracle estimator needs --gt")
        estimator = OracleEstimator(gt, args.noise_deg, args.noise_trans, args.seed)
    else:
        if args.target is not None:
            if not args.target.is_dir():
                raise UsageError(f"--target: no such directory {args.target}")
            target = io.read_slices(args.target)
        elif gt is not None:
            target = sample_center_slices(volume, gt)
        else:
            raise UsageError("the gradient-descent estimator needs --target or --gt")
        estimator = GradientDescentEstimator(
            volume,
            target,
            steps=args.steps,
            step_size=args.step_size,
            weights=LossWeights(args.beta, args.gamma),
            backtracking=args.backtracking,
            smoothing=args.smoothing,
        )
    result = standardize(volume, estimator, args.n_iters, args.seed, gt, args.max_angle, args.max_trans)
    history = result.state.history
    diverged = any(bool(h.get("diverged", False)) for h in history)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    io.write_vvol(out / "standardized.vvol", result.volume)
    io.write_slices(out, result.slices)
    io.write_transform(out / "transform.txt", result.transform)

    manifest = {
        "command": args._command,
        "volume": args.volume.name,
        "dims": volume.dims,
        "seed": args.seed,
        "n_iters": args.n_iters,
        "estimator": estimator.name,
    }
    manifest.update({f"estimator_{k}": v for k, v in estimator.params().items()})
    for entry in history:
        k = entry["iteration"]
        for key, value in entry.items():
            if key != "iteration":
                manifest[f"iter{k}_{key}"] = value
    manifest.update(_transform_entries("final_", result.transform))
    if gt is not None:
        manifest["final_so3_deg"] = geodesic_angle_deg(result.transform.rotation, gt.rotation)
        manifest["final_trans_norm"] = float(np.linalg.norm(result.transform.translation - gt.translation))
    manifest["diverged"] = diverged
    io.write_manifest(out / "manifest.txt", manifest)

    if args.figures:
        from . import plotting

        plotting.plot_slices(result.slices, out / "slices.png", title="standardized center slices")
        plotting.plot_convergence(history, out / "convergence.png")
        if gt is not None:
            plotting.plot_comparison(result.slices, sample_center_slices(volume, gt), out / "comparison.png")
    if diverged:
        _warn("pose estimator diverged; outputs are flagged in the manifest")
        return EXIT_DIVERGED
    return EXIT_OK


def _read_cases(path):
    base = path.parent
    cases = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        missing = {"case", "est", "gt", "volume"} - fields
        if missing:
            raise UsageError(f"--batch {path}: missing columns {sorted(missing)}")
        for row in reader:
            resolved = {}
            for key in ("est", "gt", "volume"):
                p = Path(row[key].strip())
                resolved[key] = p if p.is_absolute() else base / p
            cases.append((row["case"].strip(), resolved))
    if not cases:
        raise UsageError(f"--batch {path}: no cases")
    names = [c for c, _ in cases]
    if len(set(names)) != len(names):
        raise UsageError(f"--batch {path}: case names must be unique")
    return cases


def _evaluate_case(est_path, gt_path, volume_path):
    volume = io.read_vvol(_need_file(volume_path, "volume"))
    est = io.read_transform(_need_file(est_path, "est"))
    gt = io.read_transform(_need_file(gt_path, "gt"))
    return est, gt, volume, evaluate(est, gt, volume)


def aggregate(reports):
    """``{metric: (mean, std, n)}`` over flat reports, std with ``n - 1`` denominator."""
    rows = [r.flat() for r in reports]
    out = {}
    for key in rows[0]:
        values = np.array([row[key] for row in rows], dtype=float)
        n = len(values)
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if n > 1 else 0.0
        out[key] = (mean, std, n)
    return out


def write_summary(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n"])
        for key, (mean, std, n) in summary.items():
            w.writerow([key, repr(mean), repr(std) if math.isfinite(std) else "nan", n])


def cmd_evaluate(args):
    out = args.out
    if args.batch is not None:
        cases = _read_cases(_need_file(args.batch, "--batch"))
        (out / "cases").mkdir(parents=True, exist_ok=True)
        reports = []
        # cases run in file order so the aggregate is reproducible
        for name, paths in cases:
            _, _, _, report = _evaluate_case(paths["est"], paths["gt"], paths["volume"])
            (out / "cases" / f"{name}.txt").write_text(report.to_text())
            reports.append(report)
        summary = aggregate(reports)
        write_summary(out / "summary.csv", summary)
        if args.figures:
            from . import plotting

            plotting.plot_batch_summary([r.flat() for r in reports], out / "summary.png")
        return EXIT_OK

    for value, flag in ((args.est, "--est"), (args.gt, "--gt"), (args.volume, "--volume")):
        _need_file(value, flag)
    est, gt, volume, report = _evaluate_case(args.est, args.gt, args.volume)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    if args.figures:
        from . import plotting

        plotting.plot_comparison(
            sample_center_slices(volume, est), sample_center_slices(volume, gt), out / "comparison.png",
            title=f"SO3 {report.so3_deg:.3f} deg, translation {report.trans_mm_total:.3f} mm",
        )
    return EXIT_OK


def cmd_extract_slices(args):
    volume = io.read_vvol(_need_file(args.volume, "--volume"))
    io.write_slices(args.out, extract_center_slices(volume))
    return EXIT_OK


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        return args._handler(args)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 for --help
        return int(exc.code or 0)
    except UsageError as exc:
        _warn(f"usage error: {exc}")
        return EXIT_USAGE
    except OSError as exc:
        where = f"{exc.filename}: " if exc.filename else ""
        _warn(f"I/O error: {where}{exc.strerror or exc}")
        return EXIT_ERROR
    except (FacestdError, ValueError) as exc:
        _warn(f"error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
