"""Aggregate layer statistics, outlier rules, and paired hypothesis tests.

All moments are population moments (1/n), kurtosis is excess (Gaussian = 0),
and quantiles use linear interpolation at rank h = (n-1)*p. These conventions
are used everywhere in the package; changing them changes detector behaviour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Entries with |x| <= EPS_SPARSITY count as "zero or close to zero" for spar.
EPS_SPARSITY = 1e-6

# Default outlier thresholds.
Z_MAX = 3.0
IQR_K = 1.5
SKEW_MAX = 1.0
KURT_MAX = 3.0


@dataclass(frozen=True)
class LayerStats:
    """The nine aggregate operators for one tensor at one step.

    var/std are population values; kurt is excess kurtosis; spar is the
    fraction of entries with magnitude <= the sparsity epsilon used when the
    summary was computed.
    """

    count: int
    max: float
    min: float
    median: float
    mean: float
    var: float
    std: float
    skew: float
    kurt: float
    spar: float

    FIELD_ORDER = ("count", "max", "min", "median", "mean",
                   "var", "std", "skew", "kurt", "spar")

    @property
    def degenerate(self) -> bool:
        """True when the second moment vanished (skew/kurt are sentinels)."""
        return self.var == 0.0

    @property
    def rms(self) -> float:
        """Root mean square of the underlying entries: sqrt(mean^2 + var)."""
        return math.sqrt(self.mean * self.mean + self.var)

    @property
    def l2_norm(self) -> float:
        return math.sqrt(self.count) * self.rms

    @property
    def mean_abs_lower(self) -> float:
        """Lower estimate of mean(|x|) from recorded moments.

        max(|mean|, std*sqrt(2/pi)): exact at the degenerate extreme and for
        zero-mean Gaussians, a lower bound otherwise.
        """
        return max(abs(self.mean), self.std * math.sqrt(2.0 / math.pi))

    def validate(self) -> None:
        if self.count < 1:
            raise ValueError("count must be a positive integer")
        if not all(math.isfinite(getattr(self, f)) for f in self.FIELD_ORDER[1:]):
            raise ValueError("non-finite statistic")
        if self.var < 0.0:
            raise ValueError("var must be non-negative")
        if not (self.min <= self.median <= self.max):
            raise ValueError("median outside [min, max]")
        if not (self.min <= self.mean <= self.max):
            raise ValueError("mean outside [min, max]")
        root = math.sqrt(self.var)
        if abs(self.std - root) > 1e-12 * max(root, 1.0):
            raise ValueError("std inconsistent with var")
        if not (0.0 <= self.spar <= 1.0):
            raise ValueError("spar outside [0, 1]")


def compute_stats(values: np.ndarray, eps_sparsity: float = EPS_SPARSITY) -> LayerStats:
    """Reduce a finite real vector to its LayerStats summary.

    Degenerate inputs (zero second moment, including count=1) report
    skew = kurt = 0 rather than NaN.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot summarize an empty vector")
    if not np.isfinite(x).all():
        raise ValueError("non-finite value in input vector")
    n = x.size
    # Tensors beyond ~1e75 would overflow the fourth-power intermediates;
    # rescale those first (skew/kurt are scale invariant).
    peak = float(np.abs(x).max())
    scale = peak if peak > 1e75 else 1.0
    z = x / scale if scale != 1.0 else x
    zmean = float(z.mean())
    centered = z - zmean
    zm2 = float(np.mean(centered ** 2))
    mean = zmean * scale
    if zm2 > 0.0:
        m3 = float(np.mean(centered ** 3))
        m4 = float(np.mean(centered ** 4))
        skew = m3 / zm2 ** 1.5
        kurt = m4 / zm2 ** 2 - 3.0
        var = zm2 * scale * scale
        std = math.sqrt(zm2) * scale
        if not math.isfinite(var):
            raise ValueError("variance overflows float64")
    else:
        var = 0.0
        std = 0.0
        skew = 0.0
        kurt = 0.0
    return LayerStats(
        count=n,
        max=float(x.max()),
        min=float(x.min()),
        median=float(np.median(x)),
        mean=mean,
        var=var,
        std=std,
        skew=skew,
        kurt=kurt,
        spar=float(np.count_nonzero(np.abs(x) <= eps_sparsity)) / n,
    )


@dataclass(frozen=True)
class OutlierReport:
    """Outcome of one outlier rule applied to a vector."""

    method: str  # "zscore" | "iqr" | "shape"
    flagged_indices: tuple[int, ...]
    mu: float
    sigma: float
    q1: float | None = None
    q3: float | None = None
    iqr: float | None = None
    skew: float | None = None
    kurt: float | None = None
    degenerate: bool = False
    thresholds_used: dict[str, float] = field(default_factory=dict)


def detect_outliers_zscore(values: np.ndarray, z_max: float = Z_MAX) -> OutlierReport:
    """Flag indices with |x - mu| > z_max * sigma (population sigma).

    sigma = 0 yields no flags and marks the report degenerate.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("z-score rule needs at least 2 values")
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma > 0.0:
        flagged = np.nonzero(np.abs(x - mu) > z_max * sigma)[0]
        degenerate = False
    else:
        flagged = np.empty(0, dtype=np.intp)
        degenerate = True
    return OutlierReport(
        method="zscore",
        flagged_indices=tuple(int(i) for i in flagged),
        mu=mu,
        sigma=sigma,
        degenerate=degenerate,
        thresholds_used={"z_max": z_max},
    )


def detect_outliers_iqr(values: np.ndarray, k: float = IQR_K) -> OutlierReport:
    """Flag values outside [Q1 - k*IQR, Q3 + k*IQR]."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 4:
        raise ValueError("IQR rule needs at least 4 values")
    q1 = float(np.quantile(x, 0.25))  # linear interpolation at (n-1)*p
    q3 = float(np.quantile(x, 0.75))
    iqr = q3 - q1
    lo = q1 - k * iqr
    hi = q3 + k * iqr
    flagged = np.nonzero((x < lo) | (x > hi))[0]
    return OutlierReport(
        method="iqr",
        flagged_indices=tuple(int(i) for i in flagged),
        mu=float(x.mean()),
        sigma=float(x.std()),
        q1=q1,
        q3=q3,
        iqr=iqr,
        degenerate=iqr == 0.0,
        thresholds_used={"iqr_k": k},
    )


def detect_shape_distortion(stats: LayerStats,
                            skew_max: float = SKEW_MAX,
                            kurt_max: float = KURT_MAX) -> bool:
    """True when skew > skew_max or |excess kurtosis| > kurt_max."""
    return stats.skew > skew_max or abs(stats.kurt) > kurt_max


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    odds_ratio: float
    correction_applied: bool


def chi2_sf_df1(statistic: float) -> float:
    """Survival function of the chi-square distribution with df=1.

    For X ~ chi2(1), P(X > s) = erfc(sqrt(s/2)).
    """
    if statistic < 0.0:
        raise ValueError("chi-square statistic must be non-negative")
    return math.erfc(math.sqrt(statistic / 2.0))


def mcnemar_test(b: int, c: int, continuity: bool = False) -> TestResult:
    """McNemar's test on the discordant cell counts of a paired 2x2 table.

    statistic = (b-c)^2/(b+c), or (|b-c|-1)^2/(b+c) with the continuity
    correction. The conditional odds ratio b/c is reported alongside
    (math.inf when c = 0).
    """
    if b < 0 or c < 0:
        raise ValueError("counts must be non-negative")
    if b + c == 0:
        raise ValueError("McNemar's test requires b + c >= 1")
    if continuity:
        statistic = (abs(b - c) - 1) ** 2 / (b + c) if abs(b - c) > 1 else 0.0
    else:
        statistic = (b - c) ** 2 / (b + c)
    ratio = b / c if c > 0 else math.inf
    return TestResult(
        statistic=statistic,
        p_value=chi2_sf_df1(statistic),
        odds_ratio=ratio,
        correction_applied=continuity,
    )


def odds_ratio(a: int, b: int, c: int, d: int) -> TestResult:
    """Odds ratio (a*d)/(b*c) of a 2x2 contingency table.

    Any zero cell triggers the Haldane-Anscombe +0.5 correction on every
    cell. statistic is log(OR) and p_value the two-sided Wald test on it.
    """
    if min(a, b, c, d) < 0:
        raise ValueError("counts must be non-negative")
    cells = [float(a), float(b), float(c), float(d)]
    corrected = any(v == 0.0 for v in cells)
    if corrected:
        cells = [v + 0.5 for v in cells]
    ca, cb, cc, cd = cells
    ratio = (ca * cd) / (cb * cc)
    log_or = math.log(ratio)
    se = math.sqrt(sum(1.0 / v for v in cells))
    z = log_or / se
    return TestResult(
        statistic=log_or,
        p_value=math.erfc(abs(z) / math.sqrt(2.0)),
        odds_ratio=ratio,
        correction_applied=corrected,
    )
