"""Statistics: Welch's t-test, a randomized conditional-independence test,
and the majority-vote feature-usage pipeline.

The t and chi-square tail probabilities are computed from scratch via
continued-fraction/series evaluations of the regularized incomplete beta and
gamma functions, so no statistics library is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StatResult",
    "FeatureTable",
    "welch_ttest",
    "student_t_two_sided_p",
    "regularized_incomplete_beta",
    "regularized_gamma_q",
    "chi2_sf",
    "ci_test_randomized",
    "majority_vote",
    "probe_report",
    "ProbeReport",
    "parse_feature_tables",
]

_EPS = 1e-12
_MAX_ITER = 500


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the incomplete-beta continued fraction."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) with the symmetry split for continued-fraction convergence."""
    if not (a > 0.0 and b > 0.0):
        raise ValueError(f"beta parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def _gamma_p_series(a: float, x: float) -> float:
    """Lower regularized gamma P(a, x) by power series (x < a + 1)."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"incomplete gamma series failed for a={a}, x={x}")


def _gamma_q_continued_fraction(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by Lentz continued fraction (x >= a+1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"incomplete gamma fraction failed for a={a}, x={x}")


def regularized_gamma_q(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a), the upper tail."""
    if a <= 0.0:
        raise ValueError(f"shape must be positive, got {a}")
    if x < 0.0:
        raise ValueError(f"argument must be >= 0, got {x}")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_continued_fraction(a, x)


def chi2_sf(x: float, k: float) -> float:
    """Chi-square upper tail P(X >= x) with ``k`` degrees of freedom."""
    return regularized_gamma_q(k / 2.0, x / 2.0)


# ---------------------------------------------------------------------------
# Welch's t-test
# ---------------------------------------------------------------------------


@dataclass
class StatResult:
    t: float
    df: float
    p: float


def welch_ttest(a, b) -> StatResult:
    """Two-sample unequal-variance t-test, two-sided.

    Degenerate inputs (both samples constant): equal means give t=0, p=1;
    unequal means give an infinite statistic with p=0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("welch_ttest expects 1-D samples")
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError(f"need at least 2 observations per sample, got {na} and {nb}")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    sa, sb = var_a / na, var_b / nb
    se2 = sa + sb
    if se2 == 0.0:
        fallback_df = float(na + nb - 2)
        if mean_a == mean_b:
            return StatResult(t=0.0, df=fallback_df, p=1.0)
        return StatResult(
            t=math.copysign(math.inf, mean_a - mean_b), df=fallback_df, p=0.0
        )
    t = (mean_a - mean_b) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return StatResult(t=t, df=df, p=student_t_two_sided_p(t, df))


# ---------------------------------------------------------------------------
# Randomized conditional-independence test
# ---------------------------------------------------------------------------


@dataclass
class FeatureTable:
    """Rows of (feature value, model score, conditioning vector)."""

    name: str
    feature: np.ndarray  # (n,)
    score: np.ndarray  # (n,)
    conditioning: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    source: str = ""

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        self.score = np.asarray(self.score, dtype=np.float64)
        self.conditioning = np.asarray(self.conditioning, dtype=np.float64)
        n = self.feature.shape[0]
        if self.feature.ndim != 1 or self.score.shape != (n,):
            raise ValueError("feature and score must be equal-length 1-D columns")
        if self.conditioning.size == 0:
            self.conditioning = np.empty((n, 0))
        if self.conditioning.ndim != 2 or self.conditioning.shape[0] != n:
            raise ValueError(
                f"conditioning must be (n, m), got {self.conditioning.shape}"
            )
        stacked = np.concatenate(
            [self.feature, self.score, self.conditioning.ravel()]
        )
        if not np.isfinite(stacked).all():
            raise ValueError(f"table {self.name!r} contains missing/non-finite values")

    def __len__(self) -> int:
        return self.feature.shape[0]


def _standardize_columns(x: np.ndarray, what: str) -> np.ndarray:
    std = x.std(axis=0)
    if np.any(std == 0.0):
        bad = np.nonzero(std == 0.0)[0].tolist()
        raise ValueError(f"{what} column(s) {bad} have zero variance")
    return (x - x.mean(axis=0)) / std


def _median_bandwidth(x: np.ndarray) -> float:
    """Median pairwise euclidean distance over a bounded row subsample."""
    n = x.shape[0]
    if n > 256:
        idx = np.linspace(0, n - 1, 256).astype(np.int64)
        x = x[idx]
    diffs = x[:, None, :] - x[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    upper = dists[np.triu_indices(dists.shape[0], k=1)]
    med = float(np.median(upper))
    return med if med > 0.0 else 1.0


def _random_features(
    x: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """sqrt(2/D) * cos(x W + b) random Fourier features, bandwidth by median."""
    sigma = _median_bandwidth(x)
    w = rng.normal(0.0, 1.0, size=(x.shape[1], count)) / sigma
    b = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return np.sqrt(2.0 / count) * np.cos(x @ w + b)


def ci_test_randomized(
    table: FeatureTable,
    n_random_features: int = 25,
    rng: np.random.Generator | None = None,
) -> float:
    """p value for H0: feature independent of score given the conditioning.

    Both variables are expanded into random Fourier features; with a
    conditioning set present, both expansions are residualized against the
    conditioning set's (larger) expansion. The statistic is n times the
    squared Frobenius norm of the residual cross-covariance; its null is
    approximated by moment-matching a scaled chi-square.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_random_features < 1:
        raise ValueError(f"n_random_features must be >= 1, got {n_random_features}")
    n = len(table)
    if n < 8:
        raise ValueError(f"need at least 8 rows, got {n}")
    f = _standardize_columns(table.feature[:, None], "feature")
    s = _standardize_columns(table.score[:, None], "score")
    phi_f = _random_features(f, n_random_features, rng)
    phi_s = _random_features(s, n_random_features, rng)
    phi_f = phi_f - phi_f.mean(axis=0)
    phi_s = phi_s - phi_s.mean(axis=0)
    if table.conditioning.shape[1] > 0:
        z = _standardize_columns(table.conditioning, "conditioning")
        phi_z = _random_features(z, 4 * n_random_features, rng)
        phi_z = phi_z - phi_z.mean(axis=0)
        gram = phi_z.T @ phi_z + 1e-10 * n * np.eye(phi_z.shape[1])
        phi_f = phi_f - phi_z @ np.linalg.solve(gram, phi_z.T @ phi_f)
        phi_s = phi_s - phi_z @ np.linalg.solve(gram, phi_z.T @ phi_s)
    cross = phi_f.T @ phi_s / n
    statistic = n * float((cross**2).sum())
    cov_f = phi_f.T @ phi_f / n
    cov_s = phi_s.T @ phi_s / n
    mean = float(np.trace(cov_f) * np.trace(cov_s))
    variance = 2.0 * float((cov_f**2).sum() * (cov_s**2).sum())
    if mean <= 0.0 or variance <= 0.0:
        raise ValueError("degenerate feature expansion (zero null moments)")
    theta = variance / (2.0 * mean)
    k = 2.0 * mean * mean / variance
    return chi2_sf(statistic / theta, k)


# ---------------------------------------------------------------------------
# Majority vote and the usage grid
# ---------------------------------------------------------------------------


def majority_vote(p_values, alpha: float) -> str:
    """"used" iff strictly more than half the tests reject at ``alpha``."""
    p_values = list(p_values)
    if not p_values:
        raise ValueError("majority_vote needs at least one p value")
    rejections = sum(1 for p in p_values if p < alpha)
    return "used" if rejections * 2 > len(p_values) else "not_used"


@dataclass
class ProbeReport:
    """feature x decision grid with the per-test p values."""

    rows: list  # (name, decision, [p per test])
    test_names: list
    alpha: float

    def to_csv(self) -> str:
        header = ["feature", "decision"] + [f"p_{t}" for t in self.test_names]
        lines = [",".join(header)]
        for name, decision, ps in self.rows:
            lines.append(",".join([name, decision] + [f"{p:.6g}" for p in ps]))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def probe_report(tables, tests, alpha: float = 0.01) -> ProbeReport:
    """Run every test on every table and take the majority decision per row.

    ``tests`` maps test name -> callable(FeatureTable) -> p value.
    """
    tables = list(tables)
    if not tables:
        raise ValueError("probe_report needs at least one table")
    if hasattr(tests, "items"):
        named = list(tests.items())
    else:
        named = [(f"test{i + 1}", t) for i, t in enumerate(tests)]
    if not named:
        raise ValueError("probe_report needs at least one test")
    rows = []
    for table in tables:
        ps = [float(test(table)) for _, test in named]
        rows.append((table.name, majority_vote(ps, alpha), ps))
    return ProbeReport(rows=rows, test_names=[n for n, _ in named], alpha=alpha)


def parse_feature_tables(text: str) -> list:
    """Parse probe-input CSV into tables.

    Header ``feature,score,z_1..z_m`` yields one table named "feature";
    an extra leading ``name`` column groups rows into one table per name.
    """
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty feature table")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:2] == ["name", "feature"]:
        named = True
        offset = 1
    elif header[0] == "feature":
        named = False
        offset = 0
    else:
        raise ValueError(
            "feature CSV must start with 'feature,score' or 'name,feature,score'"
        )
    if header[offset : offset + 2] != ["feature", "score"]:
        raise ValueError("feature CSV needs 'feature,score' columns")
    z_count = len(header) - offset - 2
    groups: dict[str, list] = {}
    for ln in lines[1:]:
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != len(header):
            raise ValueError(f"row has {len(cells)} cells, header has {len(header)}")
        key = cells[0] if named else "feature"
        groups.setdefault(key, []).append([float(c) for c in cells[offset:]])
    tables = []
    for name, rows in groups.items():
        arr = np.asarray(rows)
        tables.append(
            FeatureTable(
                name=name,
                feature=arr[:, 0],
                score=arr[:, 1],
                conditioning=arr[:, 2 : 2 + z_count],
            )
        )
    return tables
