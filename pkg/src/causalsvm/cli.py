"""Command-line interface.

Every command that writes a file also writes ``<out>.manifest.json`` with
the full configuration and library versions. Exit codes: 0 success, 2 bad
configuration, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .baselines import LearnerKind, TwoModelPredictor, load_predictor, save_predictor, train_two_model
from .bounds import BoundInputs, GaussianParametric, estimate_d2, generalization_bound, sauer_growth_log
from .cv import CvGrid, nested_cv_select, write_scores
from .domain import Dataset, DatasetError, read_csv, split_train_test, write_csv
from .evaluation import CSV_HEADER, evaluate_model, write_reports
from .kernels import KernelSpec
from .surrogate import minimax_risk
from .svm import TrainingError, label_from_value, load_model, save_model, support_vectors, train
from .synthetic import RNG_ID, Assignment, GeneratorSpec
from .weights import DEFAULT_CLIP, constant_ratios, fit_propensity, ratios_from_propensity

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
WEIGHT_MODES = ("constant", "propensity", "column")


class ConfigError(ValueError):
    pass


# -- shared helpers ----------------------------------------------------------


def apply_weights(dataset: Dataset, mode: str, clip: float = DEFAULT_CLIP) -> Dataset:
    """Fill control ratios according to ``mode``; ``column`` keeps the file's values."""
    if mode == "constant":
        return constant_ratios(dataset)
    if mode == "propensity":
        return ratios_from_propensity(dataset, fit_propensity(dataset), clip)
    if mode == "column":
        if np.any(np.isnan(dataset.ratios[~dataset.treated])):
            raise ConfigError("--weights column needs a ratio on every control unit")
        return dataset
    raise ConfigError(f"unknown weights mode {mode!r}")


def load_predictor_any(path: str | Path):
    """A causal SVM model or a two-model predictor, by document shape."""
    doc = json.loads(Path(path).read_text())
    if "two_model" in doc:
        return TwoModelPredictor.from_dict(doc)
    return load_model(path)


def manifest(command: str, config: dict, seeds: Sequence[int] = ()) -> dict:
    return {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "rng": RNG_ID,
        "versions": {
            "artifact": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def write_manifest(out: str | Path, command: str, config: dict, seeds: Sequence[int] = ()) -> Path:
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest(command, config, seeds), indent=1, sort_keys=True) + "\n")
    return path


def _kernel(args) -> KernelSpec:
    return KernelSpec.parse(args.kernel, args.inv_width)


# -- experiment matrix -------------------------------------------------------

CAUSAL_SVM = "causal_svm"
TWO_SVM = "two_svm"
TWO_RIDGE = "two_ridge"
TWO_LOGISTIC = "two_logistic"
METHODS = (CAUSAL_SVM, TWO_SVM, TWO_RIDGE, TWO_LOGISTIC)


@dataclass(frozen=True)
class MethodSpec:
    method: str
    kernel: KernelSpec | None = None
    gamma: float = 1e-8
    l2: float = 1e-4

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method != TWO_LOGISTIC and self.kernel is None:
            raise ConfigError(f"{self.method} needs a kernel")

    @property
    def label(self) -> str:
        if self.method == TWO_LOGISTIC:
            return "2 logistic"
        names = {CAUSAL_SVM: "causal SVM", TWO_SVM: "2 SVM", TWO_RIDGE: "2 ridge"}
        if self.method == TWO_RIDGE:
            return f"{names[self.method]} {self.kernel.label} {self.l2:g}"
        return f"{names[self.method]} {self.kernel.label} {self.gamma:g}"

    def fit(self, train_set: Dataset, seed: int, tol: float):
        if self.method == CAUSAL_SVM:
            return train(train_set, self.kernel, self.gamma, tol=tol)
        if self.method == TWO_SVM:
            kind = LearnerKind.svm(self.kernel, gamma=self.gamma)
        elif self.method == TWO_RIDGE:
            kind = LearnerKind.ridge(self.kernel, self.l2)
        else:
            kind = LearnerKind.logistic(self.l2)
        return train_two_model(kind, train_set, seed, tol)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
            "gamma": self.gamma,
            "l2": self.l2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        k = d.get("kernel")
        return cls(d["method"], None if k is None else KernelSpec.from_dict(k), d.get("gamma", 1e-8), d.get("l2", 1e-4))


@dataclass(frozen=True)
class RunConfig:
    """Configuration of an experiment matrix.

    Data comes from ``generator`` (regenerated per seed) or from the CSV at
    ``data`` (split per seed).
    """

    methods: tuple[MethodSpec, ...]
    generator: GeneratorSpec | None = None
    data: str | None = None
    fractions: tuple[float, ...] = (0.01, 0.1)
    seeds: tuple[int, ...] = tuple(range(10))
    weights: str = "constant"
    clip: float = DEFAULT_CLIP
    test_fraction: float = 0.5
    tol: float = 1e-8

    def __post_init__(self):
        for name in ("methods", "fractions", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if (self.generator is None) == (self.data is None):
            raise ConfigError("give exactly one of generator and data")
        if not self.methods:
            raise ConfigError("no methods configured")
        if self.weights not in WEIGHT_MODES:
            raise ConfigError(f"unknown weights mode {self.weights!r}")
        if not self.seeds or not self.fractions:
            raise ConfigError("seeds and fractions must be nonempty")

    def to_dict(self) -> dict:
        d = {
            "methods": [m.to_dict() for m in self.methods],
            "generator": None if self.generator is None else self.generator.to_dict(),
            "data": self.data,
            "fractions": list(self.fractions),
            "seeds": list(self.seeds),
            "weights": self.weights,
            "clip": self.clip,
            "test_fraction": self.test_fraction,
            "tol": self.tol,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["methods"] = tuple(MethodSpec.from_dict(m) for m in d["methods"])
        if d.get("generator") is not None:
            d["generator"] = GeneratorSpec.from_dict(d["generator"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class MatrixResult:
    config: RunConfig
    # losses[method_index][seed_index][fraction_index], NaN for failed runs
    losses: np.ndarray
    errors: dict = field(default_factory=dict)

    def cell(self, i: int, j: int) -> str:
        v = self.losses[i, :, j]
        v = v[~np.isnan(v)]
        if v.size == 0:
            return "failed"
        sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
        return f"{np.mean(v):.2f}({sd:.2f})"

    def rows(self) -> list[list[str]]:
        header = ["method"] + [f"l_{f:g}" for f in self.config.fractions]
        out = [header]
        for i, m in enumerate(self.config.methods):
            out.append([m.label] + [self.cell(i, j) for j in range(len(self.config.fractions))])
        return out

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())


def _seed_data(config: RunConfig, seed: int, loaded: Dataset | None) -> tuple[Dataset, Dataset]:
    data = config.generator.generate(seed) if config.generator is not None else loaded
    tr, te = split_train_test(data, config.test_fraction, seed)
    return apply_weights(tr, config.weights, config.clip), te


def run_experiment_matrix(config: RunConfig) -> MatrixResult:
    """Train and evaluate every method on every seed.

    A failing (method, seed) run leaves NaN in its cells and an entry in
    ``errors``; the rest of the matrix still runs.
    """
    loaded = read_csv(config.data) if config.data is not None else None
    losses = np.full((len(config.methods), len(config.seeds), len(config.fractions)), np.nan)
    errors = {}
    for s, seed in enumerate(config.seeds):
        tr, te = _seed_data(config, seed, loaded)
        for i, m in enumerate(config.methods):
            try:
                model = m.fit(tr, seed, config.tol)
                reps = evaluate_model(model, te, config.fractions)
            except (TrainingError, ValueError, np.linalg.LinAlgError) as exc:
                errors[f"{m.label}/seed{seed}"] = str(exc)
                logger.warning("matrix: %s seed %d failed: %s", m.label, seed, exc)
                continue
            losses[i, s] = [r.loss_percent for r in reps]
    return MatrixResult(config, losses, errors)


# -- decision grid -----------------------------------------------------------


@dataclass(frozen=True)
class GridRow:
    x: float
    y: float
    h: float
    label: str
    support_vector: bool = False


def emit_decision_grid(model, bounds: tuple[float, float, float, float], resolution: int, theta: float = 1.0) -> list[GridRow]:
    """Decision values on a ``resolution x resolution`` lattice, then support vectors.

    Support-vector rows (causal SVM models only) carry ``support_vector=True``
    and their decision value at the training point.
    """
    if resolution < 1:
        raise ConfigError("resolution must be >= 1")
    dim = model.dim if hasattr(model, "dim") else model.model_t.support.shape[1]
    if dim != 2:
        raise ConfigError(f"decision grids need a 2-D model, got {dim} features")
    xmin, xmax, ymin, ymax = bounds
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    h = model.decision_values(pts)
    rows = [GridRow(float(p[0]), float(p[1]), float(v), label_from_value(v, theta).name) for p, v in zip(pts, h)]
    if hasattr(model, "lam"):
        sv_t, sv_c = support_vectors(model)
        idx = np.concatenate([sv_t, model.train.n_t + sv_c]).astype(int)
        X = model.train.X[idx]
        if idx.size:
            for p, v in zip(X, model.decision_values(X)):
                rows.append(GridRow(float(p[0]), float(p[1]), float(v), label_from_value(v, theta).name, True))
    return rows


def write_grid(rows: Sequence[GridRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "h", "label", "support_vector"])
        for r in rows:
            w.writerow([repr(r.x), repr(r.y), repr(r.h), r.label, int(r.support_vector)])


# -- subcommands -------------------------------------------------------------


def _assignment(args) -> Assignment | None:
    if args.assignment is None:
        return None
    if args.assignment == "balanced":
        return Assignment.balanced()
    if args.assignment == "bernoulli":
        return Assignment.bernoulli(args.p)
    return Assignment.covariate_sigmoid(args.scale, args.feature_index)


def cmd_generate(args) -> dict:
    spec = GeneratorSpec(args.generator, args.n, args.seed, args.noise, _assignment(args))
    write_csv(spec.generate(), args.out)
    return {"generator": spec.to_dict()}


def cmd_weights(args) -> dict:
    data = apply_weights(read_csv(args.data), args.weights, args.clip)
    write_csv(data, args.out)
    return {"data": args.data, "weights": args.weights, "clip": args.clip}


def cmd_train(args) -> dict:
    data = apply_weights(read_csv(args.data), args.weights, args.clip)
    model = train(data, _kernel(args), args.gamma, tol=args.tol)
    save_model(model, args.out)
    return {
        "data": args.data,
        "kernel": model.kernel.to_dict(),
        "gamma": args.gamma,
        "tol": args.tol,
        "weights": args.weights,
        "clip": args.clip,
        "duality_gap": model.duality_gap,
    }


def cmd_predict(args) -> dict:
    model = load_predictor_any(args.model)
    data = read_csv(args.data)
    h = model.decision_values(data.X)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "h", "label"])
        for i, v in enumerate(h):
            w.writerow([i, repr(float(v)), label_from_value(v, args.theta).name])
    return {"model": args.model, "data": args.data, "theta": args.theta}


def cmd_evaluate(args) -> dict:
    model = load_predictor_any(args.model)
    reports = evaluate_model(model, read_csv(args.data), args.fractions)
    write_reports(reports, args.out)
    return {"model": args.model, "data": args.data, "fractions": args.fractions}


def cmd_matrix(args) -> dict:
    if args.config:
        config = RunConfig.from_json(Path(args.config).read_text())
    else:
        kernel = _kernel(args)
        methods = tuple(MethodSpec(m, None if m == TWO_LOGISTIC else kernel, args.gamma) for m in args.methods)
        gen = None
        if args.data is None:
            gen = GeneratorSpec(args.generator, args.n, 0, args.noise, _assignment(args))
        weights = args.weights
        if weights is None:
            # covariate-dependent assignment needs estimated ratios
            covariate = gen is not None and gen.assignment is not None and gen.assignment.kind == "covariate_sigmoid"
            weights = "propensity" if covariate else "constant"
        config = RunConfig(
            methods=methods,
            generator=gen,
            data=args.data,
            fractions=tuple(args.fractions),
            seeds=tuple(args.seeds),
            weights=weights,
            clip=args.clip,
            tol=args.tol,
        )
    result = run_experiment_matrix(config)
    result.write_csv(args.out)
    return {"run_config": config.to_dict(), "failures": result.errors}


def cmd_cv(args) -> dict:
    data = apply_weights(read_csv(args.data), args.weights, args.clip)
    kernels = tuple(KernelSpec.parse(k, w) for k in args.kernels for w in (args.inv_widths if k == "rbf" else [None]))
    grid = CvGrid(kernels, tuple(args.gammas), args.folds, args.seed)
    result = nested_cv_select(data, grid, tol=args.tol)
    write_scores(result, args.out)
    return {
        "data": args.data,
        "grid": {"kernels": [k.to_dict() for k in kernels], "gammas": list(grid.gammas), "folds": grid.folds, "seed": grid.seed},
        "selected": {"kernel": result.kernel.to_dict(), "gamma": result.gamma},
    }


def cmd_bound(args) -> dict:
    growth = args.growth_log
    if growth is None:
        if args.vc_dim is None:
            raise ConfigError("give --growth-log or --vc-dim")
        growth = sauer_growth_log(args.vc_dim, 2 * args.n_t)
    d2 = args.d2
    r_t, r_c, M = args.r_t, args.r_c, args.M
    if args.data is not None:
        data = read_csv(args.data)
        if d2 is None:
            X, t = data.X, data.treated
            d2 = estimate_d2(X[t], X[~t], GaussianParametric())
        if args.model is not None:
            data = apply_weights(data, args.weights, args.clip)
            h = load_predictor_any(args.model).decision_values(data.X)
            # hinge values never exceed 1 + max|h|
            M = max(1.0, 1.0 + float(np.max(np.abs(h))))
            risk = minimax_risk(h, data)
            r_t, r_c = risk.treatment_risk / M, risk.control_risk / M
    inputs = BoundInputs(args.n_t, args.n_c, args.delta, args.pdim, growth, 1.0 if d2 is None else d2, M)
    record = {"inputs": asdict(inputs), "r_hat_t": r_t, "r_hat_c": r_c, "bound": generalization_bound(r_t, r_c, inputs)}
    text = json.dumps(record, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return record


def cmd_grid(args) -> dict:
    model = load_predictor_any(args.model)
    rows = emit_decision_grid(model, tuple(args.bounds), args.resolution, args.theta)
    write_grid(rows, args.out)
    return {"model": args.model, "bounds": list(args.bounds), "resolution": args.resolution, "theta": args.theta}


COMMANDS = {
    "generate": cmd_generate,
    "weights": cmd_weights,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "matrix": cmd_matrix,
    "cv": cmd_cv,
    "bound": cmd_bound,
    "grid": cmd_grid,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalsvm", description="Minimax causal SVM experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_arg(sp, required=True):
        sp.add_argument("--data", required=required, help="dataset CSV")

    def out_arg(sp, required=True):
        sp.add_argument("--out", required=required, help="output path")

    def weight_args(sp, default="constant"):
        sp.add_argument("--weights", choices=WEIGHT_MODES, default=default)
        sp.add_argument("--clip", type=float, default=DEFAULT_CLIP)

    def kernel_args(sp):
        sp.add_argument("--kernel", choices=("linear", "poly2", "poly3", "rbf"), default="rbf")
        sp.add_argument("--inv-width", type=float, default=0.1)
        sp.add_argument("--gamma", type=float, default=1e-8)
        sp.add_argument("--tol", type=float, default=1e-8)

    def gen_args(sp):
        sp.add_argument("--generator", choices=("spirals", "threshold_2d", "imbalanced_30", "highdim_120"), default="spirals")
        sp.add_argument("--n", type=int, default=800)
        sp.add_argument("--noise", type=float, default=0.0, help="effect-flip probability (spirals)")
        sp.add_argument("--assignment", choices=("balanced", "bernoulli", "covariate_sigmoid"))
        sp.add_argument("--p", type=float, default=0.5)
        sp.add_argument("--scale", type=float, default=0.75)
        sp.add_argument("--feature-index", type=int, default=0)

    sp = sub.add_parser("generate", help="write a synthetic dataset")
    gen_args(sp)
    sp.add_argument("--seed", type=int, default=0)
    out_arg(sp)

    sp = sub.add_parser("weights", help="fill control density ratios")
    data_arg(sp)
    weight_args(sp)
    out_arg(sp)

    sp = sub.add_parser("train", help="fit a causal SVM")
    data_arg(sp)
    kernel_args(sp)
    weight_args(sp)
    out_arg(sp)

    sp = sub.add_parser("predict", help="decision values and labels")
    sp.add_argument("--model", required=True)
    data_arg(sp)
    sp.add_argument("--theta", type=float, default=1.0)
    out_arg(sp)

    sp = sub.add_parser("evaluate", help="quantile-neutral loss against ground truth")
    sp.add_argument("--model", required=True)
    data_arg(sp)
    sp.add_argument("--fractions", type=float, nargs="+", default=[0.01, 0.1])
    out_arg(sp)

    sp = sub.add_parser("matrix", help="mean(std) loss table over seeds")
    sp.add_argument("--config", help="RunConfig JSON; overrides the other flags")
    data_arg(sp, required=False)
    gen_args(sp)
    kernel_args(sp)
    weight_args(sp, default=None)
    sp.add_argument("--methods", nargs="+", choices=METHODS, default=[CAUSAL_SVM])
    sp.add_argument("--fractions", type=float, nargs="+", default=[0.01, 0.1])
    sp.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    out_arg(sp)

    sp = sub.add_parser("cv", help="select kernel and gamma by held-out minimax risk")
    data_arg(sp)
    weight_args(sp)
    sp.add_argument("--kernels", nargs="+", default=["linear", "poly2", "poly3", "rbf"])
    sp.add_argument("--inv-widths", type=float, nargs="+", default=[0.05, 0.1])
    sp.add_argument("--gammas", type=float, nargs="+", default=[1e-8, 1e-6, 1e-4])
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-8)
    out_arg(sp)

    sp = sub.add_parser("bound", help="generalization bound as JSON")
    sp.add_argument("--n-t", type=int, required=True)
    sp.add_argument("--n-c", type=int, required=True)
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--pdim", type=int, required=True)
    sp.add_argument("--growth-log", type=float)
    sp.add_argument("--vc-dim", type=int, help="derive growth_log by Sauer's lemma at 2 n_t")
    sp.add_argument("--d2", type=float)
    sp.add_argument("--M", type=float, default=1.0)
    sp.add_argument("--r-t", type=float, default=0.0)
    sp.add_argument("--r-c", type=float, default=0.0)
    sp.add_argument("--model", help="compute empirical risks and M from this model on --data")
    data_arg(sp, required=False)
    weight_args(sp)
    out_arg(sp, required=False)

    sp = sub.add_parser("grid", help="decision surface on a 2-D lattice")
    sp.add_argument("--model", required=True)
    sp.add_argument("--bounds", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"), default=[-7, 7, -7, 7])
    sp.add_argument("--resolution", type=int, default=100)
    sp.add_argument("--theta", type=float, default=1.0)
    out_arg(sp)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = COMMANDS[args.command](args)
        if args.out:
            seeds = getattr(args, "seeds", None) or [getattr(args, "seed", None)]
            flags = {k: v for k, v in vars(args).items() if k != "verbose"}
            write_manifest(args.out, args.command, {"flags": flags, "resolved": config}, [s for s in seeds if s is not None])
    except (OSError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
