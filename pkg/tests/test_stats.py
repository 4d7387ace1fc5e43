"""Welch's t-test, the special functions under it, the randomized
conditional-independence test, and the feature-usage report."""

import math

import numpy as np
import pytest

from attnhybrid.stats import (
    FeatureTable,
    ProbeReport,
    chi2_sf,
    ci_test_randomized,
    majority_vote,
    parse_feature_tables,
    probe_report,
    regularized_gamma_q,
    regularized_incomplete_beta,
    student_t_two_sided_p,
    welch_ttest,
)


def _t_density(x: float, df: float) -> float:
    log_c = (
        math.lgamma((df + 1.0) / 2.0)
        - math.lgamma(df / 2.0)
        - 0.5 * math.log(df * math.pi)
    )
    return math.exp(log_c - (df + 1.0) / 2.0 * math.log1p(x * x / df))


def _two_sided_p_quadrature(t: float, df: float, nodes: int = 400) -> float:
    """Independent oracle: integrate the t density over [0, |t|] with
    Gauss-Legendre and fold the result into a two-sided tail."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = abs(t) / 2.0
    pts = half * (x + 1.0)
    dens = np.array([_t_density(v, df) for v in pts])
    return 2.0 * (0.5 - half * float(w @ dens))


def _binomial_central_interval(n: int, p: float, coverage: float = 0.99):
    """Smallest-index central interval [lo, hi] of Binomial(n, p)."""
    logs = np.array(
        [
            math.lgamma(n + 1)
            - math.lgamma(k + 1)
            - math.lgamma(n - k + 1)
            + k * math.log(p)
            + (n - k) * math.log1p(-p)
            for k in range(n + 1)
        ]
    )
    cdf = np.cumsum(np.exp(logs))
    tail = (1.0 - coverage) / 2.0
    lo = int(np.searchsorted(cdf, tail))
    hi = int(np.searchsorted(cdf, 1.0 - tail))
    return lo, hi


class TestSpecialFunctions:
    def test_incomplete_beta_closed_forms(self):
        for x in (0.05, 0.3, 0.62, 0.97):
            assert regularized_incomplete_beta(1.0, 1.0, x) == pytest.approx(
                x, abs=1e-14
            )
            assert regularized_incomplete_beta(1.0, 3.5, x) == pytest.approx(
                1.0 - (1.0 - x) ** 3.5, abs=1e-13
            )
            assert regularized_incomplete_beta(2.5, 1.0, x) == pytest.approx(
                x**2.5, abs=1e-13
            )
            assert regularized_incomplete_beta(0.5, 0.5, x) == pytest.approx(
                2.0 / math.pi * math.asin(math.sqrt(x)), abs=1e-13
            )

    def test_incomplete_beta_symmetry(self):
        for a, b, x in ((2.0, 5.0, 0.3), (0.7, 1.3, 0.8), (4.0, 4.0, 0.5)):
            assert regularized_incomplete_beta(a, b, x) == pytest.approx(
                1.0 - regularized_incomplete_beta(b, a, 1.0 - x), abs=1e-13
            )

    def test_incomplete_beta_edges_and_errors(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
        assert regularized_incomplete_beta(2.0, 3.0, -0.5) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.5) == 1.0
        with pytest.raises(ValueError, match="positive"):
            regularized_incomplete_beta(0.0, 1.0, 0.5)

    def test_gamma_q_closed_forms(self):
        for x in (0.2, 1.0, 3.7, 12.0):
            assert regularized_gamma_q(1.0, x) == pytest.approx(
                math.exp(-x), abs=1e-13
            )
            # Erlang shape 3: Q(3, x) = e^-x (1 + x + x^2/2)
            assert regularized_gamma_q(3.0, x) == pytest.approx(
                math.exp(-x) * (1.0 + x + x * x / 2.0), abs=1e-13
            )
        assert regularized_gamma_q(2.5, 0.0) == 1.0
        with pytest.raises(ValueError, match="positive"):
            regularized_gamma_q(-1.0, 2.0)
        with pytest.raises(ValueError, match=">= 0"):
            regularized_gamma_q(1.0, -2.0)

    def test_chi2_sf_exponential_identity(self):
        for x in (0.5, 2.0, 7.3):
            assert chi2_sf(x, 2.0) == pytest.approx(math.exp(-x / 2.0), abs=1e-13)
        # chi-square with 4 dof: Q(2, x/2) = e^{-x/2}(1 + x/2)
        assert chi2_sf(3.0, 4.0) == pytest.approx(
            math.exp(-1.5) * (1.0 + 1.5), abs=1e-13
        )


class TestStudentT:
    def test_matches_quadrature_on_grid(self):
        for t in (0.05, 0.3, 1.0, 2.1, 3.7, 6.0, 9.5):
            for df in (1.0, 2.0, 4.5, 10.0, 37.3, 120.0, 250.0):
                got = student_t_two_sided_p(t, df)
                want = _two_sided_p_quadrature(t, df)
                assert abs(got - want) <= 1e-8, (t, df, got, want)

    def test_known_values(self):
        # df=1 is a Cauchy: P(|T| >= 1) = 1/2, P(|T| >= t) = 1 - 2/pi*atan(t)
        assert student_t_two_sided_p(1.0, 1.0) == pytest.approx(0.5, abs=1e-13)
        assert student_t_two_sided_p(3.0, 1.0) == pytest.approx(
            1.0 - 2.0 / math.pi * math.atan(3.0), abs=1e-13
        )
        # df=2 has the closed form p = 1 - t/sqrt(t^2+2)
        for t in (0.5, 1.7, 4.0):
            assert student_t_two_sided_p(t, 2.0) == pytest.approx(
                1.0 - t / math.sqrt(t * t + 2.0), abs=1e-13
            )

    def test_antisymmetric_in_t(self):
        for t in (0.3, 1.9, 5.5):
            assert student_t_two_sided_p(-t, 7.0) == student_t_two_sided_p(t, 7.0)

    def test_monotone_decreasing_in_magnitude(self):
        ps = [student_t_two_sided_p(t, 9.0) for t in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)]
        assert all(b < a for a, b in zip(ps, ps[1:]))

    def test_edges(self):
        assert student_t_two_sided_p(0.0, 5.0) == 1.0
        assert student_t_two_sided_p(math.inf, 5.0) == 0.0
        with pytest.raises(ValueError, match="degrees of freedom"):
            student_t_two_sided_p(1.0, 0.0)


class TestWelch:
    def test_textbook_example(self):
        result = welch_ttest([1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 3.0, 4.0, 5.0, 6.0])
        assert result.t == pytest.approx(-1.0, abs=1e-15)
        assert result.df == pytest.approx(8.0, abs=1e-12)
        assert result.p == pytest.approx(0.346594, abs=1e-6)

    def test_symmetry_under_swap(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=10), rng.normal(size=7) + 0.5
        fwd, rev = welch_ttest(a, b), welch_ttest(b, a)
        assert fwd.t == -rev.t
        assert fwd.df == rev.df
        assert fwd.p == rev.p

    def test_identical_samples_give_p_one(self):
        sample = [0.93, 0.95, 0.97, 0.99]
        result = welch_ttest(sample, sample)
        assert result.t == 0.0
        assert result.p == 1.0

    def test_unequal_variance_dof_shrinks(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 0.1, size=12)
        b = rng.normal(0.0, 30.0, size=12)
        result = welch_ttest(a, b)
        # Welch-Satterthwaite collapses toward the noisy sample's dof.
        assert result.df < 12.5

    def test_matches_variance_formula(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=9)
        b = rng.normal(size=14) + 0.3
        result = welch_ttest(a, b)
        sa = a.var(ddof=1) / 9
        sb = b.var(ddof=1) / 14
        t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
        df = (sa + sb) ** 2 / (sa**2 / 8 + sb**2 / 13)
        assert result.t == pytest.approx(t, abs=1e-12)
        assert result.df == pytest.approx(df, abs=1e-12)

    def test_constant_samples(self):
        equal = welch_ttest([2.0, 2.0, 2.0], [2.0, 2.0])
        assert (equal.t, equal.p, equal.df) == (0.0, 1.0, 3.0)
        apart = welch_ttest([2.0, 2.0], [3.0, 3.0])
        assert apart.t == -math.inf and apart.p == 0.0
        assert welch_ttest([3.0, 3.0], [2.0, 2.0]).t == math.inf

    def test_small_samples_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            welch_ttest([1.0], [1.0, 2.0])
        with pytest.raises(ValueError, match="1-D"):
            welch_ttest(np.zeros((2, 2)), [1.0, 2.0])


class TestFeatureTable:
    def test_row_count_and_defaults(self):
        table = FeatureTable("edge", np.arange(9.0), np.arange(9.0) * 2.0)
        assert len(table) == 9
        assert table.conditioning.shape == (9, 0)

    def test_validation(self):
        with pytest.raises(ValueError, match="equal-length"):
            FeatureTable("bad", np.arange(4.0), np.arange(5.0))
        with pytest.raises(ValueError, match="non-finite"):
            FeatureTable("bad", np.array([1.0, np.nan]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError, match=r"\(n, m\)"):
            FeatureTable(
                "bad", np.arange(4.0), np.arange(4.0), conditioning=np.zeros((3, 1))
            )


class TestCiTest:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(3)
        table = FeatureTable("x", rng.normal(size=64), rng.normal(size=64))
        a = ci_test_randomized(table, rng=np.random.default_rng(11))
        b = ci_test_randomized(table, rng=np.random.default_rng(11))
        assert a == b

    def test_minimum_rows_and_degenerate_columns(self):
        small = FeatureTable("x", np.arange(4.0), np.arange(4.0))
        with pytest.raises(ValueError, match="at least 8"):
            ci_test_randomized(small)
        flat = FeatureTable("x", np.ones(16), np.arange(16.0))
        with pytest.raises(ValueError, match="zero variance"):
            ci_test_randomized(flat)
        table = FeatureTable("x", np.arange(16.0), np.arange(16.0))
        with pytest.raises(ValueError, match="n_random_features"):
            ci_test_randomized(table, n_random_features=0)

    def test_level_on_independent_pairs(self):
        # 1000 seeded repetitions of a true null; the rejection count must
        # land inside the central 99% binomial window, and the p values must
        # be close to uniform.
        rejections = 0
        ps = []
        for rep in range(1000):
            rng = np.random.default_rng(rep)
            table = FeatureTable("x", rng.normal(size=500), rng.normal(size=500))
            p = ci_test_randomized(table, rng=np.random.default_rng(10_000 + rep))
            ps.append(p)
            rejections += p < 0.01
        lo, hi = _binomial_central_interval(1000, 0.01)
        assert lo <= rejections <= hi, (rejections, lo, hi)
        sorted_ps = np.sort(ps)
        ks = float(np.max(np.abs(np.arange(1, 1001) / 1000.0 - sorted_ps)))
        assert ks < 0.1, ks

    def test_power_on_dependent_pairs(self):
        hits = 0
        for rep in range(100):
            rng = np.random.default_rng(2000 + rep)
            f = rng.normal(size=500)
            s = f + 0.25 * rng.normal(size=500)
            p = ci_test_randomized(
                FeatureTable("x", f, s), rng=np.random.default_rng(20_000 + rep)
            )
            hits += p < 0.01
        assert hits >= 95, hits

    def test_conditioning_absorbs_confounder(self):
        # f and s share a confounder z. Unconditionally they are dependent;
        # given z they are not. The conditional rejection rate is only
        # approximately calibrated (moment-matched null), so it gets a loose
        # ceiling rather than a tight window.
        conditional = 0
        unconditional = 0
        for rep in range(300):
            rng = np.random.default_rng(4000 + rep)
            z = rng.normal(size=500)
            f = z + 0.3 * rng.normal(size=500)
            s = z + 0.5 * rng.normal(size=500)
            p_cond = ci_test_randomized(
                FeatureTable("x", f, s, conditioning=z[:, None]),
                rng=np.random.default_rng(40_000 + rep),
            )
            conditional += p_cond < 0.01
            if rep < 50:
                p_raw = ci_test_randomized(
                    FeatureTable("x", f, s), rng=np.random.default_rng(50_000 + rep)
                )
                unconditional += p_raw < 0.01
        assert unconditional >= 45, unconditional
        assert conditional <= 15, conditional

    def test_conditional_power_on_direct_effect(self):
        hits = 0
        for rep in range(50):
            rng = np.random.default_rng(6000 + rep)
            z = rng.normal(size=500)
            f = 0.5 * z + rng.normal(size=500)
            s = 0.8 * f + 0.2 * z + 0.1 * rng.normal(size=500)
            p = ci_test_randomized(
                FeatureTable("x", f, s, conditioning=z[:, None]),
                rng=np.random.default_rng(60_000 + rep),
            )
            hits += p < 0.01
        assert hits >= 45, hits


class TestMajorityVote:
    def test_strict_majority_required(self):
        assert majority_vote([0.001, 0.5, 0.002], alpha=0.01) == "used"
        assert majority_vote([0.5, 0.9, 0.02], alpha=0.01) == "not_used"
        # a 1-of-2 tie is not a majority
        assert majority_vote([0.001, 0.5], alpha=0.01) == "not_used"
        assert majority_vote([0.001], alpha=0.01) == "used"
        # boundary: p == alpha does not reject
        assert majority_vote([0.01, 0.001, 0.001], alpha=0.01) == "used"
        assert majority_vote([0.01, 0.01, 0.001], alpha=0.01) == "not_used"

    def test_permutation_invariance(self):
        ps = [0.002, 0.8, 0.003]
        assert majority_vote(ps, 0.01) == majority_vote(list(reversed(ps)), 0.01)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            majority_vote([], 0.01)


class TestProbeReport:
    def _tables(self):
        rng = np.random.default_rng(7)
        n = 400
        tables = []
        for i in range(4):  # dependent: score echoes the feature
            f = rng.normal(size=n)
            tables.append(FeatureTable(f"dep{i}", f, f + 0.3 * rng.normal(size=n)))
        for i in range(4):  # independent
            tables.append(
                FeatureTable(f"ind{i}", rng.normal(size=n), rng.normal(size=n))
            )
        return tables

    def _tests(self):
        return {
            f"rff{i}": lambda table, s=i: ci_test_randomized(
                table, rng=np.random.default_rng(s)
            )
            for i in (1, 2, 3)
        }

    def test_decisions_on_synthetic_grid(self):
        report = probe_report(self._tables(), self._tests(), alpha=0.01)
        assert len(report.rows) == 8
        correct = sum(
            1
            for name, decision, _ in report.rows
            if decision == ("used" if name.startswith("dep") else "not_used")
        )
        assert correct >= 7, report.rows

    def test_csv_shape(self):
        report = probe_report(self._tables()[:2], self._tests(), alpha=0.01)
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "feature,decision,p_rff1,p_rff2,p_rff3"
        assert len(lines) == 3
        cells = lines[1].split(",")
        assert cells[0] == "dep0" and cells[1] in ("used", "not_used")
        assert all(0.0 <= float(c) <= 1.0 for c in cells[2:])

    def test_list_of_tests_gets_default_names(self):
        table = FeatureTable("x", np.arange(16.0), np.arange(16.0) * 2.0)
        report = probe_report([table], [lambda t: 0.5, lambda t: 0.002], alpha=0.01)
        assert report.test_names == ["test1", "test2"]
        assert report.rows[0][1] == "not_used"

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError, match="at least one table"):
            probe_report([], self._tests())
        table = FeatureTable("x", np.arange(16.0), np.arange(16.0))
        with pytest.raises(ValueError, match="at least one test"):
            probe_report([table], {})

    def test_write_and_reload(self, tmp_path):
        report = ProbeReport(
            rows=[("border", "used", [0.001, 0.002])],
            test_names=["a", "b"],
            alpha=0.01,
        )
        out = tmp_path / "usage.csv"
        report.write(out)
        assert out.read_text() == report.to_csv()


class TestParseFeatureTables:
    def test_single_table_header(self):
        text = "feature,score,z_1\n1.0,2.0,0.5\n2.0,4.0,0.25\n"
        (table,) = parse_feature_tables(text)
        assert table.name == "feature"
        assert table.feature.tolist() == [1.0, 2.0]
        assert table.score.tolist() == [2.0, 4.0]
        assert table.conditioning.shape == (2, 1)

    def test_named_tables_keep_first_appearance_order(self):
        text = (
            "name,feature,score\n"
            "border,1.0,0.1\nartifact,2.0,0.2\nborder,3.0,0.3\nartifact,4.0,0.4\n"
        )
        tables = parse_feature_tables(text)
        assert [t.name for t in tables] == ["border", "artifact"]
        assert tables[0].feature.tolist() == [1.0, 3.0]
        assert tables[1].score.tolist() == [0.2, 0.4]
        assert tables[0].conditioning.shape == (2, 0)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            parse_feature_tables("  \n ")
        with pytest.raises(ValueError, match="must start with"):
            parse_feature_tables("score,feature\n1,2\n")
        with pytest.raises(ValueError, match="cells"):
            parse_feature_tables("feature,score\n1.0\n")
        with pytest.raises(ValueError, match="'feature,score'"):
            parse_feature_tables("name,feature,wrong\nx,1,2\n")
