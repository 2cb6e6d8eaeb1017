"""Model evaluation, regularization sweeps, and walk-forward validation."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import TimeSeries, build_windows, center
from .objective import Loss, inconsistency, loss_value
from .solver import FitOptions, _pad_factors, fit_auto_rank, lambda_max

SWEEP_CSV_COLUMNS = (
    "alpha",
    "kappa",
    "lambda",
    "rank",
    "train_loss",
    "test_loss",
    "train_inconsistency",
    "test_inconsistency",
    "wall_time_s",
)


@dataclass
class EvalResult:
    """Forecast quality of a model on one series."""

    loss: float
    inconsistency: float
    per_horizon_loss: np.ndarray
    n_windows: int


def evaluate_forecasts(
    Fhat: np.ndarray, F: np.ndarray, n: int, loss: Loss = Loss()
) -> EvalResult:
    """Metrics for a precomputed forecast matrix against realized futures."""
    Fhat = np.asarray(Fhat, dtype=float)
    F = np.asarray(F, dtype=float)
    H = F.shape[1] // n
    per_h = np.array(
        [
            loss_value(Fhat[:, h * n : (h + 1) * n], F[:, h * n : (h + 1) * n], loss)
            for h in range(H)
        ]
    )
    return EvalResult(
        loss=loss_value(Fhat, F, loss),
        inconsistency=inconsistency(Fhat, n),
        per_horizon_loss=per_h,
        n_windows=F.shape[0],
    )


def evaluate(model, series: TimeSeries | np.ndarray, loss: Loss = Loss()) -> EvalResult:
    """Windowed forecast metrics of a fitted model on a (held-out) series.

    The series is centered with the model's stored means, windowed with
    the model's M and H, and scored with the given loss.  The per-horizon
    losses use the same per-window averaging as the total, restricted to
    one horizon block, so for elementwise losses they sum to the total.
    """
    centered, _ = center(series, model.means)
    data = build_windows(centered, model.M, model.H)
    Fhat = model.forecast(data.P)
    return evaluate_forecasts(Fhat, data.F, data.n, loss)


@dataclass
class SweepRow:
    alpha: float
    kappa: float
    lam: float
    rank: int
    train_loss: float
    test_loss: float
    train_inconsistency: float
    test_inconsistency: float
    wall_time_s: float
    failed: bool = False


@dataclass
class SweepTable:
    rows: list[SweepRow] = field(default_factory=list)

    def best(self, tie_tol: float = 0.01) -> SweepRow:
        """Row minimizing test loss, near-ties toward larger alpha then kappa.

        Rows within (1 + tie_tol) of the minimum test loss are considered
        tied; the tied row with the largest alpha (then largest kappa)
        wins, preferring stronger regularization at equal quality.
        """
        ok = [r for r in self.rows if not r.failed and np.isfinite(r.test_loss)]
        if not ok:
            raise ValueError("sweep produced no successful rows")
        lo = min(r.test_loss for r in ok)
        tied = [r for r in ok if r.test_loss <= lo * (1.0 + tie_tol)]
        return max(tied, key=lambda r: (r.alpha, r.kappa))


def _sweep_chain(
    alphas,
    kappa: float,
    data_train,
    data_test,
    lmax: float,
    loss: Loss,
    opts: FitOptions,
    means: np.ndarray,
) -> list[SweepRow]:
    """Fits one kappa column across the alpha grid with warm starts."""
    cap = min(data_train.P.shape[1], data_train.F.shape[1])
    k0 = min(opts.k, cap)
    scale = float(np.std(data_train.F)) or 1.0
    init = opts.init
    width = k0
    rows = []
    for alpha in alphas:
        lam = alpha * lmax
        t0 = time.perf_counter()
        try:
            model, report = fit_auto_rank(
                data_train, lam, kappa, loss,
                opts=replace(opts, k=width, init=init), means=means,
            )
        except Exception:
            rows.append(
                SweepRow(alpha, kappa, lam, -1, np.nan, np.nan, np.nan, np.nan,
                         time.perf_counter() - t0, failed=True)
            )
            continue
        tr_hat = model.forecast(data_train.P)
        te_hat = model.forecast(data_test.P)
        tr = evaluate_forecasts(tr_hat, data_train.F, data_train.n, loss)
        te = evaluate_forecasts(te_hat, data_test.F, data_test.n, loss)
        rows.append(
            SweepRow(alpha, kappa, lam, model.rank, tr.loss, te.loss,
                     tr.inconsistency, te.inconsistency, report.wall_time)
        )
        # the escalation may have widened the factors past k0; a warm start
        # can only grow, so carry the realized width into the next fit
        width = min(max(k0, model.rank), cap)
        init = _pad_factors(model.U, model.V, width, opts.seed, scale)
    return rows


def sweep(
    train: TimeSeries | np.ndarray,
    test: TimeSeries | np.ndarray,
    alphas,
    kappas,
    M: int,
    H: int,
    loss: Loss = Loss(),
    opts: FitOptions | None = None,
    jobs: int = 1,
    means: np.ndarray | None = None,
) -> SweepTable:
    """Fits a grid of (alpha, kappa) penalties and scores train and test.

    The nuclear-norm weight for each row is alpha * lambda_max computed on
    the training windows.  Within each kappa column, fits are warm-started
    from the previous alpha's factors (processed in grid order); columns
    are independent, so jobs > 1 runs them in parallel without changing
    any output.  A failed fit marks its row rather than aborting.  Rows
    come back in alpha-major grid order.

    Both series are centered with the training means by default; pass
    explicit means (e.g. zeros, when the process mean is known) to
    override.  The fitted models carry whichever means were used.
    """
    opts = opts or FitOptions()
    alphas = [float(a) for a in alphas]
    kappas = [float(k) for k in kappas]
    if not alphas or not kappas:
        raise ValueError("alphas and kappas must be non-empty")
    if any(a < 0 for a in alphas) or any(k < 0 for k in kappas):
        raise ValueError("alphas and kappas must be nonnegative")
    centered_train, means = center(train, means)
    centered_test, _ = center(test, means)
    data_train = build_windows(centered_train, M, H)
    data_test = build_windows(centered_test, M, H)
    lmax = lambda_max(data_train.P, data_train.F, loss)

    def run_column(kappa):
        return _sweep_chain(alphas, kappa, data_train, data_test, lmax, loss, opts, means)

    if jobs > 1 and len(kappas) > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, len(kappas))) as pool:
            columns = list(pool.map(run_column, kappas))
    else:
        columns = [run_column(k) for k in kappas]
    table = SweepTable()
    for ai in range(len(alphas)):
        for ki in range(len(kappas)):
            table.rows.append(columns[ki][ai])
    return table


@dataclass
class CVResult:
    """Per-split sweep tables plus a mean-aggregated table."""

    splits: list[SweepTable]
    boundaries: list[int]
    aggregate: SweepTable


def walk_forward_cv(
    series: TimeSeries | np.ndarray,
    n_splits: int,
    alphas,
    kappas,
    M: int,
    H: int,
    loss: Loss = Loss(),
    opts: FitOptions | None = None,
) -> CVResult:
    """Expanding-window validation: train on a prefix, test on what follows.

    The series is cut at n_splits + 1 evenly spaced boundaries; split j
    trains on everything before boundary j and tests on the segment up to
    boundary j+1, so every test point lies strictly after all of its
    training data (asserted).  Each split runs a full (alpha, kappa)
    sweep; the aggregate table averages metrics across splits (test
    segments have equal length, so the mean is the window-weighted mean).
    """
    if not isinstance(series, TimeSeries):
        series = TimeSeries(series)
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    T = series.T
    seg = T // (n_splits + 1)
    if seg < M + H:
        raise ValueError(
            f"T={T} is too short for {n_splits} splits with M+H={M + H} "
            f"(each test segment would have {seg} points)"
        )
    boundaries = [T - (n_splits - j) * seg for j in range(n_splits + 1)]
    splits = []
    for j in range(n_splits):
        b0, b1 = boundaries[j], boundaries[j + 1]
        train = TimeSeries(series.values[:b0], names=series.names, t0=series.t0)
        test = TimeSeries(series.values[b0:b1], names=series.names, t0=series.t0 + b0)
        # look-ahead-free: every index a test window can touch follows all train indices
        assert train.T == b0 and b0 + test.T == b1 and b1 <= T
        splits.append(sweep(train, test, alphas, kappas, M, H, loss, opts))
    agg = SweepTable()
    for i in range(len(splits[0].rows)):
        group = [t.rows[i] for t in splits]
        ok = [r for r in group if not r.failed]
        if not ok:
            agg.rows.append(replace(group[0]))
            continue
        agg.rows.append(
            SweepRow(
                alpha=group[0].alpha,
                kappa=group[0].kappa,
                lam=float(np.mean([r.lam for r in ok])),
                rank=int(round(np.mean([r.rank for r in ok]))),
                train_loss=float(np.mean([r.train_loss for r in ok])),
                test_loss=float(np.mean([r.test_loss for r in ok])),
                train_inconsistency=float(np.mean([r.train_inconsistency for r in ok])),
                test_inconsistency=float(np.mean([r.test_inconsistency for r in ok])),
                wall_time_s=float(np.sum([r.wall_time_s for r in group])),
                failed=len(ok) < len(group),
            )
        )
    return CVResult(splits=splits, boundaries=boundaries, aggregate=agg)
