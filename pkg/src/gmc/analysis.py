"""Run metrics, summary statistics and significance tests.

The Student-t machinery is self-contained: the CDF goes through the
regularised incomplete beta function evaluated by Lentz's continued
fraction, and quantiles are found by bracketing root search on that CDF.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor_nn import log_softmax


class InsufficientDataError(ValueError):
    pass


# -- special functions ----------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, dof: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    x = dof / (dof + t * t)
    return betainc_regularized(dof / 2.0, 0.5, x)


def t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, dof)
    return 1.0 - tail if t >= 0 else tail


def t_quantile(q: float, dof: float) -> float:
    """Inverse of :func:`t_cdf` by bisection (q in (0, 1))."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_quantile(1.0 - q, dof)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, dof) < q:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, dof) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# -- statistics -----------------------------------------------------------------

def confidence_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Student-t interval ``mean +- t_{(1+level)/2, n-1} * s / sqrt(n)``."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n < 2:
        raise InsufficientDataError("a confidence interval needs at least two samples")
    sd = x.std(ddof=1)
    return float(x.mean()), float(t_quantile(0.5 + level / 2.0, n - 1) * sd / math.sqrt(n))


@dataclass
class WelchResult:
    t_stat: float
    dof: float
    p_value: float


def welch_t_test(a, b, guard: float = 1e-300) -> WelchResult:
    """Two-sided Welch's unequal-variance t-test of ``mean(a) == mean(b)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InsufficientDataError("Welch's t-test needs at least two samples per group")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, float(a.size + b.size - 2), 1.0)
        se2 = guard
    t = diff / math.sqrt(se2)
    if va + vb == 0.0:
        dof = float(a.size + b.size - 2)
    else:
        dof = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return WelchResult(float(t), float(dof), float(t_sf_two_sided(t, dof)))


def auc(loss_curve) -> float:
    """Left Riemann sum with unit epoch width."""
    return float(np.sum(np.asarray(loss_curve, dtype=np.float64)))


def moving_average(x, window: int = 5) -> np.ndarray:
    """Centred moving average; edges average over the available points."""
    x = np.asarray(x, dtype=np.float64)
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(x))
    return (csum[hi] - csum[lo]) / (hi - lo)


def peak_epoch(visits, window: int = 5) -> np.ndarray:
    """Per-group epoch of maximal smoothed visitation (earliest on ties).

    ``visits`` is (epochs, groups); a 1-d curve returns a 0-d array.
    """
    v = np.asarray(visits, dtype=np.float64)
    one_d = v.ndim == 1
    v = v[:, None] if one_d else v
    peaks = np.array([int(np.argmax(moving_average(v[:, g], window)))
                      for g in range(v.shape[1])])
    return peaks[0] if one_d else peaks


def test_loss(model, images, targets, groups, n_groups: int = 4) -> np.ndarray:
    """Mean cross-entropy per group against (soft) label distributions."""
    logp = log_softmax(model.forward(images))
    per_sample = -(np.asarray(targets) * logp).sum(axis=1)
    groups = np.asarray(groups)
    return np.array([per_sample[groups == g].mean() for g in range(n_groups)])


# -- run records and summaries --------------------------------------------------

@dataclass
class RunMetrics:
    method: str
    seed: int
    test_loss: np.ndarray      # (epochs, groups)
    visit_counts: np.ndarray   # (epochs, groups)
    condition: str = ""

    def __post_init__(self):
        self.test_loss = np.asarray(self.test_loss, dtype=np.float64)
        self.visit_counts = np.asarray(self.visit_counts, dtype=np.int64)
        if self.test_loss.shape != self.visit_counts.shape:
            raise ValueError("test_loss and visit_counts must have matching shapes")

    @property
    def epochs(self) -> int:
        return self.test_loss.shape[0]

    def mean_loss_curve(self) -> np.ndarray:
        return self.test_loss.mean(axis=1)

    def auc(self) -> float:
        return auc(self.mean_loss_curve())

    def allocation(self) -> np.ndarray:
        """Per-epoch fraction of episodes spent on each group."""
        totals = self.visit_counts.sum(axis=1, keepdims=True)
        return self.visit_counts / np.maximum(totals, 1)


@dataclass
class SummaryRow:
    condition: str
    method: str
    mean_auc: float
    ci95: float
    n: int


def summarize(runs: Iterable[RunMetrics]) -> list[SummaryRow]:
    by_key: dict[tuple[str, str], list[float]] = {}
    for r in runs:
        by_key.setdefault((r.condition, r.method), []).append(r.auc())
    rows = []
    for (cond, method), aucs in sorted(by_key.items()):
        if len(aucs) >= 2:
            mean, half = confidence_interval(aucs)
        else:
            mean, half = float(aucs[0]), float("nan")
        rows.append(SummaryRow(cond, method, mean, half, len(aucs)))
    return rows


def normalize_by_uniform(rows: Sequence[SummaryRow], reference: str = "uniform") -> list[SummaryRow]:
    """Divide each condition's AUC (and CI) by that condition's Uniform AUC."""
    ref = {r.condition: r.mean_auc for r in rows if r.method == reference}
    out = []
    for r in rows:
        if r.condition not in ref:
            raise KeyError(f"no {reference!r} row for condition {r.condition!r}")
        scale = ref[r.condition]
        out.append(SummaryRow(r.condition, r.method, r.mean_auc / scale, r.ci95 / scale, r.n))
    return out


@dataclass
class TTestRow:
    condition: str
    baseline: str
    t_stat: float
    p_value: float


def pairwise_tests(runs: Iterable[RunMetrics], target: str = "gmc") -> list[TTestRow]:
    """Welch tests of ``target`` AUC against every other method, per condition."""
    aucs: dict[str, dict[str, list[float]]] = {}
    for r in runs:
        aucs.setdefault(r.condition, {}).setdefault(r.method, []).append(r.auc())
    rows = []
    for cond in sorted(aucs):
        methods = aucs[cond]
        if target not in methods or len(methods[target]) < 2:
            continue
        for base in sorted(methods):
            if base == target or len(methods[base]) < 2:
                continue
            res = welch_t_test(methods[target], methods[base])
            rows.append(TTestRow(cond, base, res.t_stat, res.p_value))
    return rows


# -- CSV ------------------------------------------------------------------------

BANDIT_FIELDS = ["condition", "epoch", "seed", "method", "group", "test_loss", "visit_count"]
SUMMARY_FIELDS = ["condition", "method", "mean_auc", "ci95", "n"]
TTEST_FIELDS = ["condition", "baseline", "t_stat", "p_value"]


def bandit_rows(run: RunMetrics) -> list[dict]:
    rows = []
    for e in range(run.epochs):
        for g in range(run.test_loss.shape[1]):
            rows.append({"condition": run.condition, "epoch": e, "seed": run.seed,
                         "method": run.method, "group": g,
                         "test_loss": repr(float(run.test_loss[e, g])),
                         "visit_count": int(run.visit_counts[e, g])})
    return rows


def write_csv(path, fields: Sequence[str], rows: Iterable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row if isinstance(row, dict) else {k: _fmt(getattr(row, k)) for k in fields})


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def read_bandit_csv(path) -> list[RunMetrics]:
    """Rebuild RunMetrics from a bandit metrics CSV."""
    cells: dict[tuple[str, str, int], dict[tuple[int, int], tuple[float, int]]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["condition"], row["method"], int(row["seed"]))
            cells.setdefault(key, {})[(int(row["epoch"]), int(row["group"]))] = (
                float(row["test_loss"]), int(row["visit_count"]))
    runs = []
    for (cond, method, seed), table in cells.items():
        n_e = max(e for e, _ in table) + 1
        n_g = max(g for _, g in table) + 1
        loss = np.full((n_e, n_g), np.nan)
        visits = np.zeros((n_e, n_g), dtype=np.int64)
        for (e, g), (l, c) in table.items():
            loss[e, g], visits[e, g] = l, c
        runs.append(RunMetrics(method, seed, loss, visits, cond))
    return runs


def read_summary_csv(path) -> list[SummaryRow]:
    with Path(path).open(newline="") as fh:
        return [SummaryRow(r["condition"], r["method"], float(r["mean_auc"]),
                           float(r["ci95"]), int(r["n"])) for r in csv.DictReader(fh)]


def read_ttest_csv(path) -> list[TTestRow]:
    with Path(path).open(newline="") as fh:
        return [TTestRow(r["condition"], r["baseline"], float(r["t_stat"]),
                         float(r["p_value"])) for r in csv.DictReader(fh)]


test_loss.__test__ = False  # keep pytest from collecting it when imported
