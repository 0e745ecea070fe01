"""Residual decision rule, evaluation metrics, and the parameter-sweep harness.

A test pixel is coded over the class-partitioned dictionary by any of the
registered solvers, then assigned to the class whose sub-dictionary
reconstructs it with the smallest residual. Reports carry the confusion
matrix with overall accuracy, average (per-class) accuracy, and the
chance-corrected kappa coefficient, all as fractions in [0, 1].
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import network, solvers
from .data import LabeledCube, extract_pixels, make_split
from .dictionary import Dictionary, GramCache, assemble

SOLVER_NAMES = ("omp", "sp", "romp", "gomp", "samp", "fista", "admm_fixed", "asdn")


def src_decide(dictionary: Dictionary, code, x: np.ndarray) -> int:
    """Class with the smallest reconstruction residual ||x - D_i a_i||;
    exact ties go to the lowest class index."""
    residuals = network.class_residuals(dictionary, code, x)
    return int(np.argmin(residuals)) + 1


@dataclass
class ClassificationReport:
    """Confusion matrix (rows = ground truth, cols = predicted) plus
    OA, AA, and kappa as fractions."""

    confusion: np.ndarray
    per_class_acc: np.ndarray
    oa: float
    aa: float
    kappa: float

    def to_json(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class_acc": self.per_class_acc.tolist(),
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClassificationReport":
        return cls(
            confusion=np.asarray(doc["confusion"], dtype=np.int64),
            per_class_acc=np.asarray(doc["per_class_acc"], dtype=np.float64),
            oa=float(doc["oa"]), aa=float(doc["aa"]), kappa=float(doc["kappa"]),
        )


def evaluate(pred, truth, n_classes: int) -> ClassificationReport:
    """Confusion matrix and OA/AA/kappa for predicted vs true labels (1..C)."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions vs {len(truth)} truths")
    if len(pred) == 0:
        raise ValueError("nothing to evaluate")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.min() < 1 or arr.max() > n_classes:
            raise ValueError(f"{name} labels outside 1..{n_classes}")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth - 1, pred - 1), 1)
    total = confusion.sum()
    row_sums = confusion.sum(axis=1)
    col_sums = confusion.sum(axis=0)

    per_class = np.zeros(n_classes)
    present = row_sums > 0
    per_class[present] = np.diag(confusion)[present] / row_sums[present]
    if not present.all():
        absent = [int(i) + 1 for i in np.flatnonzero(~present)]
        warnings.warn(f"classes {absent} absent from the test draw; "
                      "they contribute accuracy 0 to AA", stacklevel=2)

    oa = float(np.trace(confusion) / total)
    aa = float(per_class.mean())
    p_e = float((row_sums * col_sums).sum() / total ** 2)
    kappa = 1.0 if p_e >= 1.0 else (oa - p_e) / (1.0 - p_e)
    return ClassificationReport(confusion=confusion, per_class_acc=per_class,
                                oa=oa, aa=aa, kappa=float(kappa))


def make_solver(dictionary: Dictionary, name: str, params: dict | None = None,
                cache: GramCache | None = None):
    """Build a per-pixel solver callable ``x -> SparseCode``.

    ``name`` is one of omp, sp, romp, gomp, samp, fista, admm_fixed, asdn;
    ``params`` carries that solver's parameter record (lowercase keys; the
    alias "lambda" is accepted for "lam", "net" holds the network parameter
    document or a NetParams for "asdn").
    """
    params = dict(params or {})
    if "lambda" in params:
        params["lam"] = params.pop("lambda")
    if name not in SOLVER_NAMES:
        raise ValueError(f"unknown solver {name!r}; expected one of {SOLVER_NAMES}")
    cache = cache if cache is not None else GramCache(dictionary)

    if name == "omp":
        k = int(params["k"])
        return lambda x: solvers.omp(dictionary, x, k)
    if name == "sp":
        k = int(params["k"])
        return lambda x: solvers.sp(dictionary, x, k)
    if name == "romp":
        k = int(params["k"])
        return lambda x: solvers.romp(dictionary, x, k)
    if name == "gomp":
        k = int(params["k"])
        s = int(params.get("s", 2))
        return lambda x: solvers.gomp(dictionary, x, k, s)
    if name == "samp":
        step = int(params.get("step", 1))
        tol = float(params.get("tol", solvers.GREEDY_TOL))
        return lambda x: solvers.samp(dictionary, x, step, tol)
    if name == "fista":
        lam = float(params.get("lam", 0.1))
        max_iters = int(params.get("max_iters", 1000))
        tol = float(params.get("tol", 1e-8))
        return lambda x: solvers.fista(dictionary, x, lam, max_iters, tol)
    if name == "admm_fixed":
        cfg = solvers.AdmmConfig(
            lam=float(params.get("lam", 0.1)),
            rho=float(params.get("rho", 1.0)),
            relax=float(params.get("relax", 1.0)),
            tau=float(params.get("tau", 1.0)),
            max_iters=int(params.get("max_iters", 1000)),
            tol=float(params.get("tol", 1e-8)),
        )
        return lambda x: solvers.admm_fixed(dictionary, x, cfg, cache)
    # asdn: the unrolled network; "net" is a NetParams or its JSON document
    net = params.get("net")
    if net is None:
        net = network.NetParams.default(int(params.get("n_stages", 9)))
    elif isinstance(net, dict):
        net = network.NetParams.from_json(net)
    return lambda x: network.forward(dictionary, x, net, cache)[0]


def classify_testset(dictionary: Dictionary, pixels: np.ndarray, solver: str,
                     params: dict | None = None, threads: int | None = None,
                     cache: GramCache | None = None) -> np.ndarray:
    """Code every pixel column and apply the residual decision rule.

    Order-preserving and deterministic; with ``threads`` the pixels are
    processed in parallel chunks without changing results.
    """
    if pixels.ndim != 2 or pixels.shape[1] == 0:
        raise ValueError("test set is empty")
    cache = cache if cache is not None else GramCache(dictionary)
    solve = make_solver(dictionary, solver, params, cache)

    def decide(j):
        x = pixels[:, j]
        return src_decide(dictionary, solve(x), x)

    indices = range(pixels.shape[1])
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            preds = list(pool.map(decide, indices))
    else:
        preds = [decide(j) for j in indices]
    return np.asarray(preds, dtype=np.int64)


@dataclass
class SweepResult:
    """Mean and standard deviation of OA/AA/kappa per grid value over R runs."""

    parameter: str
    grid: np.ndarray
    oa_mean: np.ndarray
    oa_std: np.ndarray
    aa_mean: np.ndarray
    aa_std: np.ndarray
    kappa_mean: np.ndarray
    kappa_std: np.ndarray
    seeds: list

    def to_json(self) -> dict:
        return {
            "parameter": self.parameter,
            "grid": self.grid.tolist(),
            "oa_mean": self.oa_mean.tolist(),
            "oa_std": self.oa_std.tolist(),
            "aa_mean": self.aa_mean.tolist(),
            "aa_std": self.aa_std.tolist(),
            "kappa_mean": self.kappa_mean.tolist(),
            "kappa_std": self.kappa_std.tolist(),
            "seeds": list(self.seeds),
        }

    def to_csv(self) -> str:
        """Plot-ready CSV, one row per grid value, metrics in percent."""
        lines = ["value,oa_mean,oa_std,aa_mean,aa_std,kappa_mean,kappa_std"]
        for i, value in enumerate(self.grid):
            cells = [repr(float(value))] + [
                repr(round(100.0 * float(v), 10)) for v in (
                    self.oa_mean[i], self.oa_std[i], self.aa_mean[i],
                    self.aa_std[i], self.kappa_mean[i], self.kappa_std[i])
            ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def sweep(cube: LabeledCube, solver: str, parameter: str, grid, runs: int = 5,
          base_seed: int = 0, dict_frac: float = 0.01,
          train_frac: float = 1.0 / 11.0, normalize: bool = True,
          params: dict | None = None, threads: int | None = None) -> SweepResult:
    """Classification accuracy across a solver-parameter grid.

    For each grid value the split is re-drawn ``runs`` times with seeds
    base_seed..base_seed+runs-1 (fresh dictionary each run, so no bias from
    a single random sampling), the test pixels are classified, and
    OA/AA/kappa are averaged. Standard deviations use ddof=1 when runs > 1.
    """
    grid = np.asarray(list(grid), dtype=np.float64)
    if grid.size == 0:
        raise ValueError("parameter grid is empty")
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    base = dict(params or {})
    seeds = [base_seed + r for r in range(runs)]

    oa = np.zeros((grid.size, runs))
    aa = np.zeros((grid.size, runs))
    kappa = np.zeros((grid.size, runs))
    for gi, value in enumerate(grid):
        merged = dict(base)
        merged[parameter] = int(value) if float(value).is_integer() and \
            parameter in ("k", "s", "step", "max_iters", "n_stages") else float(value)
        for r, seed in enumerate(seeds):
            split = make_split(cube, dict_frac, train_frac, seed)
            dict_pixels, dict_labels = extract_pixels(
                cube, split.dictionary_flat(), normalize)
            dictionary = assemble(dict_pixels, dict_labels)
            test_pixels, test_labels = extract_pixels(
                cube, split.test_flat(), normalize)
            try:
                pred = classify_testset(dictionary, test_pixels, solver,
                                        merged, threads)
            except Exception as exc:
                raise RuntimeError(
                    f"sweep failed at {parameter}={value}: {exc}") from exc
            report = evaluate(pred, test_labels, cube.n_classes)
            oa[gi, r], aa[gi, r], kappa[gi, r] = report.oa, report.aa, report.kappa

    ddof = 1 if runs > 1 else 0
    return SweepResult(
        parameter=parameter, grid=grid,
        oa_mean=oa.mean(axis=1), oa_std=oa.std(axis=1, ddof=ddof),
        aa_mean=aa.mean(axis=1), aa_std=aa.std(axis=1, ddof=ddof),
        kappa_mean=kappa.mean(axis=1), kappa_std=kappa.std(axis=1, ddof=ddof),
        seeds=seeds)
