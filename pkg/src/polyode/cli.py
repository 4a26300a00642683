"""Command-line harness: ``train``, ``sweep``, ``gradcheck``, ``condition``.

A run is described by a RunSpec JSON document (``--config``); any flag given
on the command line overrides the corresponding entry. ``POLYODE_OUT`` sets
the default output root.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint
from .architectures import ConfigError, EvalCounter, ModelConfig, count_trainable, predict
from .basis import BasisKind, Kind, TimeGrid, conditioning_report
from .data import SplitSpec, load_source, parse_source, split, write_sidecar
from .gradients import finite_diff_gradient, loss, loss_and_grad, relative_error
from .integrators import IntegratorError, StepControl
from .optimizer import DivergenceError, Model, TrainConfig, init_params, train

log = logging.getLogger("polyode")

DEFAULT_DATA = "synth:smooth:15:10:2486"


class SpecError(ValueError):
    pass


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise SpecError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class ModelSection:
    arch: str = "resnet"
    channels: int = 15
    T: float = 1.0
    N_steps: int = 12
    basis: str = "legendre"
    degree: int = 3
    activation: str = "tanh"
    alpha: float = 0.0


@dataclass
class TrainSection:
    epochs: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    loss_tolerance: Optional[float] = None
    shuffle: bool = True


@dataclass
class SolverSection:
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 100_000


@dataclass
class SplitSection:
    fractions: list = field(default_factory=lambda: list(SplitSpec().fractions))
    seed: int = 0


@dataclass
class RunSpec:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    solver: SolverSection = field(default_factory=SolverSection)
    split: SplitSection = field(default_factory=SplitSection)
    data: str = DEFAULT_DATA
    data_seed: int = 0
    output_dir: str = ""

    _sections = {"model": ModelSection, "train": TrainSection, "solver": SolverSection, "split": SplitSection}

    @classmethod
    def from_dict(cls, d: dict) -> "RunSpec":
        _check_keys(d, [f.name for f in fields(cls)], "run spec")
        kw = {}
        for name, value in d.items():
            if name in cls._sections:
                sec = cls._sections[name]
                if not isinstance(value, dict):
                    raise SpecError(f"section {name!r} must be an object")
                _check_keys(value, [f.name for f in fields(sec)], name)
                kw[name] = sec(**value)
            else:
                kw[name] = value
        spec = cls(**kw)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self, n_features: int, m_targets: int) -> ModelConfig:
        m = self.model
        return ModelConfig(
            arch=m.arch, channels=m.channels, n_features=n_features, m_targets=m_targets,
            T=m.T, N_steps=m.N_steps, basis=BasisKind(m.basis, m.degree),
            activation=m.activation, alpha=m.alpha,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(**asdict(self.train))

    def step_control(self) -> StepControl:
        s = self.solver
        return StepControl(rtol=s.rtol, atol=s.atol, max_steps=s.max_steps)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(tuple(self.split.fractions), self.split.seed)

    def validate(self):
        """Check everything that can be checked without loading data."""
        try:
            parse_source(self.data)
            # dimensions are placeholders; data-dependent checks happen at load time
            self.model_config(1, 1)
            self.train_config()
            self.step_control()
            self.split_spec()
        except (ValueError, TypeError) as exc:
            raise SpecError(str(exc)) from exc
        if not self.output_dir:
            raise SpecError("output_dir is required")


def _prepare(spec: RunSpec):
    ds = load_source(spec.data, spec.data_seed)
    tr, va, te = split(ds, spec.split_spec())
    cfg = spec.model_config(ds.n_features, ds.m_targets)
    return ds, (tr, va, te), cfg


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_train(spec: RunSpec) -> int:
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", spec.to_dict())
    ds, (tr, va, te), cfg = _prepare(spec)
    src = parse_source(spec.data)
    write_sidecar(out / "data.json", ds, src[3] if src[0] == "csv" else "cols", spec.split_spec(), spec.data)

    tcfg, ctrl = spec.train_config(), spec.step_control()
    model = Model(cfg, init_params(cfg, tcfg.seed))
    counter = EvalCounter()
    summary = {"n_trainable": count_trainable(cfg), "status": "ok"}
    start = time.perf_counter()
    metrics = None
    code = 0
    try:
        model, metrics = train(model, (tr, va), tcfg, ctrl, counter)
    except DivergenceError as exc:
        summary.update(status="diverged", error=str(exc))
        model, metrics = exc.last_good, exc.metrics
        code = 2
    except IntegratorError as exc:
        summary.update(status="integrator_failure", error=f"{type(exc).__name__}: {exc}")
        code = 3
    wall = 1000.0 * (time.perf_counter() - start)

    if metrics is not None:
        metrics.write_csv(out / "metrics.csv")
    if model is not None:
        checkpoint.save(out / "model.ckpt", model.cfg, model.params)
    last = metrics.last if metrics is not None else None
    summary.update(
        epochs_run=last[0] if last else 0,
        final_train_loss=last[1] if last else None,
        final_val_loss=last[2] if last else None,
        total_rhs_evals=last[3] if last else counter.count,
        wall_ms=wall,
    )
    if code == 0 and te.n_samples:
        summary["test_loss"] = model.loss(te, ctrl)
    _write_json(out / "summary.json", summary)
    return code


SWEEP_AXES = ("degree", "basis", "arch", "depth")
SWEEP_COLUMNS = (
    "axis", "value", "arch", "basis", "degree", "T", "N_steps", "status",
    "n_trainable", "final_train_loss", "final_val_loss", "total_rhs_evals",
)


def _apply_axis(spec: RunSpec, axis: str, value: str, depth_mode: str = "horizon") -> RunSpec:
    m = spec.model
    if axis == "degree":
        m = replace(m, degree=int(value))
    elif axis == "basis":
        m = replace(m, basis=str(value))
    elif axis == "arch":
        m = replace(m, arch=str(value))
    elif axis == "depth":
        T = float(value)
        if depth_mode == "horizon":
            m = replace(m, T=T)
        else:
            # keep the step size of the base spec, scale the number of steps
            dt = m.T / m.N_steps
            m = replace(m, T=T, N_steps=max(1, int(round(T / dt))))
    else:
        raise SpecError(f"unknown sweep axis {axis!r}")
    return replace(spec, model=m)


def cmd_sweep(spec: RunSpec, axis: str, values, depth_mode: str = "horizon") -> int:
    if axis not in SWEEP_AXES:
        raise SpecError(f"axis must be one of {SWEEP_AXES}")
    root = Path(spec.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        sub = root / f"{axis}_{value}"
        try:
            run = _apply_axis(spec, axis, value, depth_mode)
            run = replace(run, output_dir=str(sub))
            run.validate()
            code = cmd_train(run)
            summary = json.loads((sub / "summary.json").read_text())
            m = run.model
            rows.append([
                axis, value, m.arch, m.basis, m.degree, m.T, m.N_steps, summary["status"],
                summary["n_trainable"], summary["final_train_loss"], summary["final_val_loss"],
                summary["total_rhs_evals"],
            ])
            if code:
                log.warning("sweep run %s=%s exited with %d", axis, value, code)
        except (SpecError, ConfigError, ValueError) as exc:
            rows.append([axis, value, "", "", "", "", "", f"error: {exc}", "", "", "", ""])
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    return 0


def gradcheck(spec: RunSpec, tolerance: float, corrupt: Optional[str] = None,
              max_coords: Optional[int] = None, batch: Optional[int] = None):
    """Analytic vs finite-difference gradients per parameter block.

    Returns a list of (block, max relative error, passed).
    """
    _, (tr, _, _), cfg = _prepare(spec)
    ctrl = spec.step_control()
    params = init_params(cfg, spec.train.seed)
    nb = batch or min(spec.train.batch_size, tr.n_samples)
    y, c = tr.features[:, :nb], tr.targets[:, :nb]

    _, grads = loss_and_grad(params, cfg, y, c, ctrl)
    if corrupt is not None:
        if corrupt not in grads:
            raise SpecError(f"unknown parameter block {corrupt!r}")
        grads[corrupt] = -grads[corrupt]

    def objective(p):
        return loss(predict(p, cfg, y, ctrl), c, p, cfg.alpha)

    indices = None
    if max_coords:
        rng = np.random.default_rng(0)
        indices = {
            k: np.sort(rng.choice(v.size, size=min(max_coords, v.size), replace=False))
            for k, v in params.items()
        }
    h = 1e-4 if cfg.arch.value == "node" else 1e-5
    fd = finite_diff_gradient(objective, params, h=h, indices=indices)
    report = []
    for k in grads:
        err = relative_error(grads[k], fd[k])
        report.append((k, err, err < tolerance))
    return report


def cmd_gradcheck(spec: RunSpec, tolerance: float, corrupt=None, max_coords=None, stream=None) -> int:
    stream = stream or sys.stdout
    report = gradcheck(spec, tolerance, corrupt, max_coords)
    print(f"{'block':<8} {'max_rel_err':>12}  result (tol {tolerance:g})", file=stream)
    for name, err, ok in report:
        print(f"{name:<8} {err:12.3e}  {'PASS' if ok else 'FAIL'}", file=stream)
    return 0 if all(ok for _, _, ok in report) else 1


def cmd_condition(degrees, N: int, kinds, out=None) -> int:
    grid = TimeGrid.linspace(0.0, 1.0, N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = conditioning_report(kinds, degrees, grid)
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "degree", "cond2"])
        for r in rows:
            w.writerow([r.kind, r.degree, "inf" if math.isinf(r.cond2) else repr(r.cond2)])
    finally:
        if out:
            fh.close()
    return 0


def _parse_range(text: str):
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


FLAG_MAP = {
    # flag dest: (section, key)
    "arch": ("model", "arch"), "channels": ("model", "channels"), "T": ("model", "T"),
    "steps": ("model", "N_steps"), "basis": ("model", "basis"), "degree": ("model", "degree"),
    "activation": ("model", "activation"), "alpha": ("model", "alpha"),
    "epochs": ("train", "epochs"), "batch_size": ("train", "batch_size"), "lr": ("train", "lr"),
    "seed": ("train", "seed"), "loss_tolerance": ("train", "loss_tolerance"),
    "rtol": ("solver", "rtol"), "atol": ("solver", "atol"),
    "split_seed": ("split", "seed"),
    "data": (None, "data"), "data_seed": (None, "data_seed"), "out": (None, "output_dir"),
}


def _add_spec_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="RunSpec JSON file")
    p.add_argument("--arch", choices=["resnet", "hamiltonian", "node"])
    p.add_argument("--basis", choices=[k.value for k in Kind])
    p.add_argument("--degree", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--activation", choices=["tanh", "identity"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--data", help="synth:<smooth|ode>:<n>:<m>:<samples> or csv:<features>:<targets>[:rows|cols]")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-tolerance", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--out", help="output directory")


def spec_from_args(args, default_name: str) -> RunSpec:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
        if not isinstance(base, dict):
            raise SpecError("config file must hold a JSON object")
    base = json.loads(json.dumps(base))
    for dest, (section, key) in FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if section is None:
            base[key] = value
        else:
            base.setdefault(section, {})[key] = value
    if not base.get("output_dir"):
        root = os.environ.get("POLYODE_OUT", "runs")
        base["output_dir"] = str(Path(root) / default_name)
    return RunSpec.from_dict(base)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyode", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model and write run artifacts")
    _add_spec_flags(t)

    s = sub.add_parser("sweep", help="train a series of models along one axis")
    _add_spec_flags(s)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--depth-mode", choices=["horizon", "steps"], default="horizon",
                   help="depth sweeps vary T with fixed steps (horizon) or with fixed step size (steps)")

    g = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    _add_spec_flags(g)
    g.add_argument("--tolerance", type=float, default=1e-6)
    g.add_argument("--max-coords", type=int, help="finite-difference at most this many entries per block")
    g.add_argument("--corrupt", help=argparse.SUPPRESS)

    c = sub.add_parser("condition", help="condition numbers of basis Vandermonde matrices (CSV)")
    c.add_argument("--degrees", default="0..10", help="range lo..hi or comma list")
    c.add_argument("--N", type=int, default=50, help="number of equispaced points on [0, 1]")
    c.add_argument("--kinds", default="monomial,legendre")
    c.add_argument("--out", help="CSV path (default stdout)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "condition":
            kinds = [k.strip() for k in args.kinds.split(",")]
            return cmd_condition(_parse_range(args.degrees), args.N, kinds, args.out)
        spec = spec_from_args(args, args.command)
        if args.command == "train":
            return cmd_train(spec)
        if args.command == "sweep":
            return cmd_sweep(spec, args.axis, [v.strip() for v in args.values.split(",")], args.depth_mode)
        return cmd_gradcheck(spec, args.tolerance, args.corrupt, args.max_coords)
    except (SpecError, ConfigError) as exc:
        print(f"polyode: error: {exc}", file=sys.stderr)
        return 64


if __name__ == "__main__":
    sys.exit(main())
