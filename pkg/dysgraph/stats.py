"""Exploratory statistics: confound regression, Mann-Whitney U test,
Spearman correlation and Benjamini-Hochberg FDR adjustment.

Missing values (NaN) are dropped pairwise, and the number of values actually
used is reported as ``n_effective``.

"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from astropy.table import Table
from joblib import Parallel, delayed
from scipy import stats as sps

from .flags import Diagnostic
from .settings import HPSQC_COLUMNS
from .utils import to_builtin

__all__ = (
    "StatResult",
    "AnalysisReport",
    "ConfoundRegressor",
    "regress_out_confound",
    "mann_whitney_u",
    "spearman",
    "fdr_bh",
    "exploratory_analysis",
    "grouped_analysis",
    "describe_scores",
)

MANN_WHITNEY = "mann_whitney"
SPEARMAN = "spearman"
EXACT_MWU_MAX = 9
EXACT_SPEARMAN_MAX = 10
P_MIN = np.finfo(float).tiny

logger = logging.getLogger(__name__)


@dataclass
class StatResult:
    """Result of a statistical test for one feature.

    ``rho`` is only set for the Spearman test. Undefined results have NaN
    statistic and p values.
    """

    feature: str
    test: str
    statistic: float = np.nan
    rho: float = np.nan
    p: float = np.nan
    p_fdr: float = np.nan
    n_effective: int = 0
    direction: int = 0
    diagnostics: list = field(default_factory=list)

    @property
    def missing(self):
        return bool(np.isnan(self.p))

    def to_dict(self):
        return to_builtin(
            {
                "feature": self.feature,
                "test": self.test,
                "statistic": self.statistic,
                "rho": self.rho,
                "p": self.p,
                "p_fdr": self.p_fdr,
                "n_effective": self.n_effective,
                "direction": self.direction,
            }
        )


def _clip_p(p):
    return float(min(1.0, max(P_MIN, p)))


def _finite(values):
    values = np.asarray(values, dtype=float)
    return values[~np.isnan(values)]


# -- confound regression ---------------------------------------------------------------


class ConfoundRegressor:
    """Remove the effect of a categorical confound from feature columns.

    For each column, the fitted model is an ordinary least-squares fit on the
    confound indicators with an intercept, which amounts to the per-level
    mean. `transform` returns the residuals. Missing values are ignored in the
    fit and stay missing.

    Columns where a level has fewer than ``min_count`` values are not fitted
    and pass through unchanged (listed in ``skipped_``).

    """

    def __init__(self, min_count=2):
        self.min_count = min_count
        self.logger = logging.getLogger(__name__)

    def fit(self, X, levels, feature_names=None):
        X = np.asarray(X, dtype=float)
        levels = np.asarray(levels, dtype=object)
        known = np.array([lv is not None for lv in levels])
        self.levels_ = sorted({lv for lv in levels[known]})
        if len(self.levels_) < 2:
            raise ValueError("the confound must have at least 2 levels")

        ncol = X.shape[1]
        names = feature_names or [str(j) for j in range(ncol)]
        self.means_ = {}
        fitted = np.ones(ncol, dtype=bool)
        for level in self.levels_:
            sel = X[levels == level]
            counts = np.sum(~np.isnan(sel), axis=0)
            fitted &= counts >= self.min_count
            with np.errstate(invalid="ignore"):
                self.means_[level] = np.where(
                    counts > 0, np.nansum(sel, axis=0) / np.maximum(counts, 1), np.nan
                )
        self.fitted_ = fitted
        self.skipped_ = [names[j] for j in np.flatnonzero(~fitted)]
        self.diagnostics_ = [
            Diagnostic("CONFOUND_SKIPPED", j, f"column {names[j]} left unchanged")
            for j in np.flatnonzero(~fitted)
        ]
        for name in self.skipped_:
            self.logger.warning(
                "confound: too few values per level for %s, left unchanged", name
            )
        return self

    def transform(self, X, levels):
        X = np.array(X, dtype=float)
        levels = np.asarray(levels, dtype=object)
        for level, means in self.means_.items():
            rows = levels == level
            X[np.ix_(rows, self.fitted_)] -= means[self.fitted_]
        return X

    def fit_transform(self, X, levels, feature_names=None):
        return self.fit(X, levels, feature_names=feature_names).transform(X, levels)


def regress_out_confound(matrix, confound="sex", min_count=2):
    """Replace each feature column of a matrix by its confound residuals.

    Returns a new `~dysgraph.matrix.FeatureMatrix`; the diagnostics of
    the columns left unchanged are stored in its ``diagnostics`` attribute.
    """
    levels = matrix.meta_column(confound)
    if any(lv is None for lv in levels):
        logger.warning(
            "confound %s: %d rows without value are left unchanged",
            confound,
            sum(lv is None for lv in levels),
        )
    reg = ConfoundRegressor(min_count=min_count)
    values = reg.fit_transform(matrix.values, levels, matrix.feature_names)
    out = matrix.with_values(values)
    out.diagnostics = reg.diagnostics_
    logger.info(
        "regressed out %s from %d features (%d skipped)",
        confound,
        len(matrix.feature_names) - len(reg.skipped_),
        len(reg.skipped_),
    )
    return out


# -- tests ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _u_counts(m, n):
    """Number of arrangements of m + n distinct values giving each U, for
    U = 0 .. m*n, as a tuple."""
    if m == 0 or n == 0:
        return (1,)
    counts = np.zeros(m * n + 1, dtype=np.int64)
    # the largest value belongs either to A (beating all of B) or to B
    with_a = _u_counts(m - 1, n)
    counts[n : n + len(with_a)] += with_a
    with_b = _u_counts(m, n - 1)
    counts[: len(with_b)] += with_b
    return tuple(counts.tolist())


def mann_whitney_u(group_a, group_b, feature=None):
    """Two-sided Mann-Whitney U test.

    The p value is exact (enumeration of the U distribution) when both
    groups have at most 9 values and there are no ties, otherwise it uses the
    normal approximation with tie and continuity corrections.

    Returns
    -------
    `StatResult`
        ``statistic`` is the U statistic of group A, ``direction`` is +1
        when group A tends to have larger values.

    """
    a, b = _finite(group_a), _finite(group_b)
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise ValueError("both groups need at least one value")

    pooled = np.concatenate([a, b])
    ranks = sps.rankdata(pooled)
    u_a = float(ranks[:na].sum() - na * (na + 1) / 2)
    mu = na * nb / 2
    n = na + nb
    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = np.any(tie_counts > 1)

    if np.all(pooled == pooled[0]):
        p = 1.0
    elif not has_ties and na <= EXACT_MWU_MAX and nb <= EXACT_MWU_MAX:
        counts = np.array(_u_counts(na, nb), dtype=float)
        total = counts.sum()
        k = int(round(u_a))
        p_low = counts[: k + 1].sum() / total
        p_high = counts[k:].sum() / total
        p = min(1.0, 2 * min(p_low, p_high))
    else:
        tie_term = np.sum(tie_counts ** 3 - tie_counts) / (n * (n - 1))
        sigma = math.sqrt(na * nb / 12 * ((n + 1) - tie_term))
        if sigma == 0:
            p = 1.0
        else:
            z = max(abs(u_a - mu) - 0.5, 0) / sigma
            p = min(1.0, 2 * sps.norm.sf(z))

    return StatResult(
        feature=feature,
        test=MANN_WHITNEY,
        statistic=u_a,
        p=_clip_p(p),
        p_fdr=_clip_p(p),
        n_effective=n,
        direction=int(np.sign(u_a - mu)),
    )


def _pearson(x, y):
    xc, yc = x - x.mean(), y - y.mean()
    return np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc))


@lru_cache(maxsize=4)
def _spearman_null(rx, ry, chunk=200000):
    """Sorted absolute rank correlations over all the n! pairings of two rank
    vectors. It only depends on the sorted ranks, given as tuples."""
    xc = np.array(rx) - np.mean(rx)
    yc = np.array(ry) - np.mean(ry)
    norm = math.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    perms = itertools.permutations(range(len(rx)))
    parts = []
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        parts.append(np.abs(yc[block] @ xc / norm))
    return np.sort(np.concatenate(parts))


def _spearman_exact_p(rx, ry, rho):
    """Permutation p value of the rank correlation, over all n! orders."""
    null = _spearman_null(tuple(np.sort(rx).tolist()), tuple(np.sort(ry).tolist()))
    extreme = null.size - np.searchsorted(null, abs(rho) - 1e-12, side="left")
    return extreme / null.size


def spearman(x, y, feature=None):
    """Spearman rank correlation with a two-sided p value.

    Ties get average ranks. The p value is exact (all permutations) for at
    most 10 pairs, otherwise it uses the t distribution with n - 2 degrees of
    freedom. Fewer than 3 complete pairs, or a constant variable, give an
    undefined (NaN) result with a diagnostic.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    keep = ~(np.isnan(x) | np.isnan(y))
    x, y = x[keep], y[keep]
    n = int(x.size)
    result = StatResult(feature=feature, test=SPEARMAN, n_effective=n)

    if n < 3:
        result.diagnostics.append(
            Diagnostic("SPEARMAN_UNDEFINED", message=f"only {n} complete pairs")
        )
        return result

    rx, ry = sps.rankdata(x), sps.rankdata(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        result.diagnostics.append(Diagnostic("SPEARMAN_UNDEFINED"))
        return result

    rho = float(np.clip(_pearson(rx, ry), -1, 1))
    if n <= EXACT_SPEARMAN_MAX:
        p = _spearman_exact_p(rx, ry, rho)
    elif abs(rho) == 1:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1 - rho ** 2))
        p = 2 * sps.t.sf(abs(t), n - 2)

    result.statistic = rho
    result.rho = rho
    result.p = result.p_fdr = _clip_p(p)
    result.direction = int(np.sign(rho))
    return result


def fdr_bh(p_values):
    """Benjamini-Hochberg adjusted p values, in the input order.

    NaN values are ignored and stay NaN.

    >>> fdr_bh([0.01, 0.02, 0.04]).round(6).tolist()
    [0.03, 0.03, 0.04]
    >>> fdr_bh([]).tolist()
    []

    """
    p = np.asarray(p_values, dtype=float)
    out = np.full(p.shape, np.nan)
    valid = np.flatnonzero(~np.isnan(p))
    m = valid.size
    if m == 0:
        return out
    pv = p[valid]
    if np.any((pv <= 0) | (pv > 1)):
        raise ValueError("p values must be in (0, 1]")
    order = np.argsort(pv, kind="stable")
    scaled = pv[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    res = np.empty(m)
    res[order] = adjusted
    out[valid] = np.maximum(res, pv)
    return out


# -- exploratory analysis --------------------------------------------------------------


class AnalysisReport:
    """Results of the exploratory analysis of one target.

    Attributes
    ----------
    target : str
        Target column.
    binary : bool
        True for the diagnosis (Mann-Whitney and Spearman), False for scores
        (Spearman only).
    results : dict
        Feature name → dict of `StatResult` per test.
    ranking : list of str
        Features sorted by ascending raw p of the primary test (Mann-Whitney
        for the diagnosis, Spearman for scores), missing p last.

    """

    columns = (
        "rank",
        "feature",
        "n",
        "U",
        "p",
        "p_fdr",
        "rho",
        "p_rho",
        "p_fdr_rho",
        "direction",
        "significant",
    )

    def __init__(
        self, target, binary, results, alpha=0.05, fdr_family="separate", top_k=5
    ):
        self.target = target
        self.binary = binary
        self.results = results
        self.alpha = alpha
        self.fdr_family = fdr_family
        self.top_k = top_k
        primary = MANN_WHITNEY if binary else SPEARMAN
        names = list(results)
        p = np.array([results[name][primary].p for name in names])
        key = np.where(np.isnan(p), np.inf, p)
        self.ranking = [names[i] for i in np.argsort(key, kind="stable")]
        self.primary = primary

    def __len__(self):
        return len(self.ranking)

    def significant(self, feature):
        res = self.results[feature][self.primary]
        return bool(not res.missing and res.p_fdr < self.alpha)

    def rows(self):
        """Table rows (dicts), in ranking order."""
        rows = []
        for rank, name in enumerate(self.ranking, start=1):
            res = self.results[name]
            mw = res.get(MANN_WHITNEY)
            sp = res[SPEARMAN]
            rows.append(
                {
                    "rank": rank,
                    "feature": name,
                    "n": max(r.n_effective for r in res.values()),
                    "U": mw.statistic if mw else np.nan,
                    "p": mw.p if mw else np.nan,
                    "p_fdr": mw.p_fdr if mw else np.nan,
                    "rho": sp.rho,
                    "p_rho": sp.p,
                    "p_fdr_rho": sp.p_fdr,
                    "direction": res[self.primary].direction,
                    "significant": self.significant(name),
                }
            )
        return rows

    def top(self, k=None):
        return self.rows()[: self.top_k if k is None else k]

    def table(self):
        """Return the results as an astropy Table (missing values masked)."""
        rows = self.rows()
        cols = {}
        for name in self.columns:
            data = [row[name] for row in rows]
            if name in ("U", "p", "p_fdr", "rho", "p_rho", "p_fdr_rho"):
                data = np.ma.masked_invalid(np.array(data, dtype=float))
            cols[name] = data
        return Table(
            [cols[name] for name in self.columns], names=self.columns, masked=True
        )

    def to_dict(self, top_k=None):
        rows = self.rows()
        return to_builtin(
            {
                "target": self.target,
                "tests": [MANN_WHITNEY, SPEARMAN] if self.binary else [SPEARMAN],
                "alpha": self.alpha,
                "fdr_family": self.fdr_family,
                "n_features": len(rows),
                "n_significant": sum(row["significant"] for row in rows),
                "top": [row["feature"] for row in rows[: self.top_k]],
                "results": rows if top_k is None else rows[:top_k],
            }
        )


def _feature_tests(x, y, name, binary):
    res = {}
    if binary:
        a, b = x[y == 1], x[y == 0]
        if np.any(~np.isnan(a)) and np.any(~np.isnan(b)):
            res[MANN_WHITNEY] = mann_whitney_u(a, b, feature=name)
        else:
            res[MANN_WHITNEY] = StatResult(feature=name, test=MANN_WHITNEY)
    res[SPEARMAN] = spearman(x, y, feature=name)
    return res


def exploratory_analysis(
    matrix, target, alpha=0.05, fdr_family="separate", top_k=5, n_jobs=1
):
    """Run the per-feature tests against a target, with FDR adjustment.

    Parameters
    ----------
    matrix : `~dysgraph.matrix.FeatureMatrix`
        Feature matrix.
    target : str
        ``diagnosis`` (Mann-Whitney dysgraphic vs intact, and Spearman against
        the 0/1 coding) or a score column (Spearman only).
    alpha : float
        Significance level for the adjusted p values.
    fdr_family : str
        ``separate`` adjusts each test family on its own, ``joint`` adjusts
        all p values of the analysis together.
    top_k : int
        Number of features logged and kept in the summary.
    n_jobs : int
        Number of joblib workers for the per-feature tests.

    Returns
    -------
    `AnalysisReport`

    """
    if fdr_family not in ("separate", "joint"):
        raise ValueError(f"invalid fdr_family {fdr_family}")
    column = matrix.resolve_target(target)
    binary = column == "diagnosis"
    y = matrix.target(column)
    values = matrix.values
    names = matrix.feature_names

    if n_jobs == 1:
        tests = [
            _feature_tests(values[:, j], y, name, binary)
            for j, name in enumerate(names)
        ]
    else:
        tests = Parallel(n_jobs=n_jobs)(
            delayed(_feature_tests)(values[:, j], y, name, binary)
            for j, name in enumerate(names)
        )
    results = dict(zip(names, tests))

    families = [MANN_WHITNEY, SPEARMAN] if binary else [SPEARMAN]
    if fdr_family == "separate":
        families = [[(name, test) for name in results] for test in families]
    else:
        families = [[(name, test) for name in results for test in families]]
    for family in families:
        adjusted = fdr_bh([results[name][test].p for name, test in family])
        for (name, test), p_fdr in zip(family, adjusted):
            results[name][test].p_fdr = p_fdr

    report = AnalysisReport(
        column, binary, results, alpha=alpha, fdr_family=fdr_family, top_k=top_k
    )
    logger.info(
        "%s: %d features, %d significant after FDR (alpha=%g)",
        column,
        len(results),
        sum(report.significant(name) for name in results),
        alpha,
    )
    for row in report.top(top_k):
        logger.debug(
            "%s #%d %s p=%.3g p_fdr=%.3g rho=%.3f",
            column,
            row["rank"],
            row["feature"],
            row["p"] if binary else row["p_rho"],
            row["p_fdr"] if binary else row["p_fdr_rho"],
            row["rho"],
        )
    return report


def grouped_analysis(matrix, target, group_by, **kwargs):
    """Run `exploratory_analysis` on the whole matrix and within each level of
    a metadata column.

    Returns a dict with the pooled report under ``None`` followed by one
    report per level.
    """
    reports = {None: exploratory_analysis(matrix, target, **kwargs)}
    for level, sub in matrix.groups(group_by).items():
        logger.info("%s = %s: %d rows", group_by, level, sub.n_rows)
        reports[level] = exploratory_analysis(sub, target, **kwargs)
    return reports


def describe_scores(matrix, group_by=None):
    """Descriptive statistics of the HPSQ-C scores per diagnosis.

    Returns an astropy Table with one row per (group, diagnosis) and the
    mean, standard deviation, min and max of each score.
    """
    groups = matrix.groups(group_by) if group_by else {"all": matrix}
    rows = []
    for level, sub in groups.items():
        diagnoses = sub.meta_column("diagnosis")
        for diag in ("intact", "dysgraphic"):
            sel = [d == diag for d in diagnoses]
            if not any(sel):
                continue
            part = sub.subset(sel)
            row = {"group": str(level), "diagnosis": diag, "n": int(sum(sel))}
            for col in HPSQC_COLUMNS:
                vals = _finite(part.column(col))
                name = col[len("hpsqc_") :]
                row[f"{name}_mean"] = vals.mean() if vals.size else np.nan
                row[f"{name}_std"] = vals.std(ddof=1) if vals.size > 1 else np.nan
                row[f"{name}_min"] = vals.min() if vals.size else np.nan
                row[f"{name}_max"] = vals.max() if vals.size else np.nan
            rows.append(row)
    if not rows:
        return Table()
    names = list(rows[0])
    table = Table(rows=[[r[n] for n in names] for r in rows], names=names, masked=True)
    for name in names[3:]:
        table[name] = np.ma.masked_invalid(np.array(table[name], dtype=float))
    return table
