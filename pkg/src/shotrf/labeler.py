"""Ground-truth RF search on a monotone RF -> quality response."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

RF_LOW, RF_HIGH = 0.0, 51.0
DEFAULT_TOL = 0.1
DEFAULT_MAX_ITERS = 12
# logit scale above the low-rail quality, as a fraction of the bracket's quality span
SCALE_MARGIN = 1e-3


class AdapterFailure(RuntimeError):
    """An encode/measure call failed; carries the RF it was asked for."""

    def __init__(self, rf: float, cause: BaseException):
        super().__init__(f"adapter failed at rf={rf:.4f}: {cause}")
        self.rf = rf
        self.cause = cause


def _logit(v: float, scale: float) -> float:
    p = min(max(v / scale, 1e-9), 1.0 - 1e-9)
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class SearchResult:
    rf_label: float
    achieved: float
    evaluations: int
    converged: bool
    reachable: bool = True


def search_rf(
    encode_and_measure: Callable[[float], float],
    target: float,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    lo: float = RF_LOW,
    hi: float = RF_HIGH,
) -> SearchResult:
    """Find rf with |quality(rf) - target| <= tol, assuming quality falls with rf.

    Both rails are probed first.  A target above the best achievable quality
    returns rf=lo, one below the worst returns rf=hi; either is flagged
    unreachable.  After `max_iters` midpoint probes the best-seen rf is
    returned with converged=False.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    evals = 0

    def probe(rf: float) -> float:
        nonlocal evals
        evals += 1
        try:
            return float(encode_and_measure(rf))
        except Exception as exc:
            raise AdapterFailure(rf, exc) from exc

    v_lo = probe(lo)
    if abs(v_lo - target) <= tol:
        return SearchResult(lo, v_lo, evals, True)
    if v_lo < target:
        return SearchResult(lo, v_lo, evals, False, reachable=False)
    v_hi = probe(hi)
    if abs(v_hi - target) <= tol:
        return SearchResult(hi, v_hi, evals, True)
    if v_hi > target:
        return SearchResult(hi, v_hi, evals, False, reachable=False)

    # Illinois false position: the bracket [lo, hi] always straddles the
    # target, as in bisection, but probes land at the interpolated crossing.
    # Interpolation runs on f = logit(target) - logit(quality / scale), which
    # rises with rf and is near linear for curves saturating at 0 and at the
    # scale.  The scale sits just above the best quality seen at the low rail,
    # so curves topping out below 100 are handled as well as those reaching it.
    best_rf, best_v = (lo, v_lo) if abs(v_lo - target) <= abs(v_hi - target) else (hi, v_hi)
    scale = v_lo + SCALE_MARGIN * (v_lo - v_hi)
    goal = _logit(target, scale)
    f_lo, f_hi = goal - _logit(v_lo, scale), goal - _logit(v_hi, scale)
    kept = 0  # -1: lo moved last time, +1: hi moved last time
    for _ in range(max_iters):
        width = hi - lo
        x = (f_hi * lo - f_lo * hi) / (f_hi - f_lo)
        x = min(max(x, lo + 1e-3 * width), hi - 1e-3 * width)
        v = probe(x)
        if abs(v - target) < abs(best_v - target):
            best_rf, best_v = x, v
        if abs(v - target) <= tol:
            return SearchResult(x, v, evals, True)
        f = goal - _logit(v, scale)
        if f < 0:
            lo, f_lo = x, f
            if kept == -1:
                f_hi *= 0.5
            kept = -1
        else:
            hi, f_hi = x, f
            if kept == 1:
                f_lo *= 0.5
            kept = 1
    return SearchResult(best_rf, best_v, evals, False)


@dataclass(frozen=True)
class LabelRecord:
    source_id: str
    rf_label: float
    achieved: float
    evaluations: int
    converged: bool


LABEL_FIELDS = ("source_id", "rf_label", "achieved", "evaluations", "converged")


def write_labels(path: str | Path, records: Iterable[LabelRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_FIELDS)
        for r in records:
            w.writerow([r.source_id, repr(r.rf_label), repr(r.achieved), r.evaluations, int(r.converged)])


def read_labels(path: str | Path) -> list[LabelRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        LabelRecord(
            r["source_id"],
            float(r["rf_label"]),
            float(r["achieved"]),
            int(r["evaluations"]),
            r["converged"] in ("1", "true", "True"),
        )
        for r in rows
    ]
