import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantitize import (
    BootstrapConfig,
    ConfigError,
    ConfusionMatrix,
    DataError,
    ErrorModel,
    bootstrap_ci,
    error_model_from_confusion,
    proportion_of,
    simulate_replicate,
)


def identity_model(labels=("A", "B")):
    return ErrorModel(tuple(labels), np.eye(len(labels)))


class TestErrorModel:
    def test_row_normalization(self):
        cm = ConfusionMatrix(("A", "B"), np.array([[9, 1], [1, 9]]))
        em = error_model_from_confusion(cm)
        assert em.dists.tolist() == [[0.9, 0.1], [0.1, 0.9]]

    def test_column_conditional_transposes(self):
        cm = ConfusionMatrix(("A", "B"), np.array([[8, 2], [4, 6]]))
        em = error_model_from_confusion(cm, mode="column_conditional")
        # column A holds 8 true A and 4 true B -> 8/12, 4/12
        assert em.dists[0].tolist() == pytest.approx([8 / 12, 4 / 12])

    def test_zero_row_falls_back_to_identity(self, caplog):
        cm = ConfusionMatrix(("A", "B"), np.array([[0, 0], [2, 8]]))
        with caplog.at_level("WARNING"):
            em = error_model_from_confusion(cm)
        assert em.dists[0].tolist() == [1.0, 0.0]
        assert "no counts" in caplog.text

    def test_rows_must_sum_to_one(self):
        with pytest.raises(DataError):
            ErrorModel(("A", "B"), np.array([[0.5, 0.4], [0.0, 1.0]]))

    def test_unknown_mode_rejected(self):
        cm = ConfusionMatrix(("A", "B"), np.eye(2, dtype=int))
        with pytest.raises(ConfigError):
            error_model_from_confusion(cm, mode="diagonal")


class TestSimulateReplicate:
    def test_identity_returns_input(self):
        labels = ["A", "B", "A", "A", "B"]
        out = simulate_replicate(labels, identity_model(),
                                 np.random.default_rng(0))
        assert out == labels

    def test_point_mass_maps_everything(self):
        em = ErrorModel(("A", "B"), np.array([[0.0, 1.0], [0.0, 1.0]]))
        out = simulate_replicate(["A", "B", "A"], em, np.random.default_rng(0))
        assert out == ["B", "B", "B"]

    def test_flip_rate_within_three_sigma(self):
        # 10000 units with a 10% flip probability: binomial oracle
        em = ErrorModel(("A", "B"), np.array([[0.9, 0.1], [0.1, 0.9]]))
        n = 10000
        out = simulate_replicate(["A"] * n, em, np.random.default_rng(42))
        flips = sum(l == "B" for l in out)
        sd = math.sqrt(n * 0.9 * 0.1)
        assert abs(flips - n * 0.1) < 3 * sd

    def test_unknown_label_rejected(self):
        with pytest.raises(DataError, match="C"):
            simulate_replicate(["C"], identity_model(), np.random.default_rng(0))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_draws_stay_in_label_set(self, seed):
        em = ErrorModel(("A", "B", "C"),
                        np.array([[0.2, 0.3, 0.5],
                                  [1.0, 0.0, 0.0],
                                  [0.0, 0.5, 0.5]]))
        out = simulate_replicate(["A", "B", "C"] * 7, em,
                                 np.random.default_rng(seed))
        assert set(out) <= {"A", "B", "C"}
        assert len(out) == 21


class TestBootstrapCi:
    def test_identity_model_gives_zero_width(self):
        labels = ["A"] * 30 + ["B"] * 70
        result = bootstrap_ci(labels, [{}] * 100, identity_model(),
                              proportion_of("A"),
                              BootstrapConfig(n_replicates=200, seed=1))
        s = result.statistics["prop_A"]
        assert s.point == 0.3
        assert s.sigma == 0.0
        assert s.ci_low == s.ci_high == 0.3

    def test_analytic_sigma_for_balanced_flip_model(self):
        # 50/50 labels with a symmetric 0.9/0.1 error model: each replicate
        # count of A is Binomial(100, 0.5), so sigma of the proportion is
        # sqrt(0.5 * 0.5 / 100) * sqrt(2*0.9*0.1/0.25)... more simply, every
        # unit flips independently with p=0.1 and flips cancel in expectation:
        # var = (0.1*0.9 + 0.1*0.9) * 50 / 100^2 -> sigma = 0.03 exactly.
        em = ErrorModel(("A", "B"), np.array([[0.9, 0.1], [0.1, 0.9]]))
        labels = ["A"] * 50 + ["B"] * 50
        result = bootstrap_ci(labels, [{}] * 100, em, proportion_of("A"),
                              BootstrapConfig(n_replicates=10000, seed=0))
        assert result.statistics["prop_A"].sigma == pytest.approx(0.03, abs=0.003)

    def test_sigma_monotone_in_error_rate(self):
        labels = ["A"] * 50 + ["B"] * 50
        sigmas = []
        for eps in (0.0, 0.1, 0.25, 0.5):
            em = ErrorModel(
                ("A", "B"), np.array([[1 - eps, eps], [eps, 1 - eps]])
            )
            result = bootstrap_ci(labels, [{}] * 100, em, proportion_of("A"),
                                  BootstrapConfig(n_replicates=2000, seed=3))
            sigmas.append(result.statistics["prop_A"].sigma)
        assert sigmas == sorted(sigmas)
        assert sigmas[0] == 0.0

    def test_same_seed_reproduces_exactly(self):
        em = ErrorModel(("A", "B"), np.array([[0.8, 0.2], [0.3, 0.7]]))
        labels = ["A", "B"] * 40
        cfg = BootstrapConfig(n_replicates=300, seed=9)
        a = bootstrap_ci(labels, [{}] * 80, em, proportion_of("A"), cfg)
        b = bootstrap_ci(labels, [{}] * 80, em, proportion_of("A"), cfg)
        assert a.to_dict() == b.to_dict()

    def test_different_seed_differs(self):
        em = ErrorModel(("A", "B"), np.array([[0.8, 0.2], [0.3, 0.7]]))
        labels = ["A", "B"] * 40
        a = bootstrap_ci(labels, [{}] * 80, em, proportion_of("A"),
                         BootstrapConfig(n_replicates=300, seed=9))
        b = bootstrap_ci(labels, [{}] * 80, em, proportion_of("A"),
                         BootstrapConfig(n_replicates=300, seed=10))
        assert a.statistics["prop_A"].sigma != b.statistics["prop_A"].sigma

    def test_normal_ci_centered_on_point(self):
        em = ErrorModel(("A", "B"), np.array([[0.9, 0.1], [0.1, 0.9]]))
        labels = ["A"] * 70 + ["B"] * 30
        result = bootstrap_ci(labels, [{}] * 100, em, proportion_of("A"),
                              BootstrapConfig(n_replicates=500, seed=2))
        s = result.statistics["prop_A"]
        assert s.ci_low == pytest.approx(s.point - 1.96 * s.sigma)
        assert s.ci_high == pytest.approx(s.point + 1.96 * s.sigma)

    def test_percentile_ci_brackets_the_mass(self):
        em = ErrorModel(("A", "B"), np.array([[0.9, 0.1], [0.1, 0.9]]))
        labels = ["A"] * 70 + ["B"] * 30
        result = bootstrap_ci(
            labels, [{}] * 100, em, proportion_of("A"),
            BootstrapConfig(n_replicates=2000, seed=2, ci_method="percentile"),
            keep_replicates=True,
        )
        s = result.statistics["prop_A"]
        inside = ((result.replicates[:, 0] >= s.ci_low)
                  & (result.replicates[:, 0] <= s.ci_high)).mean()
        assert inside >= 0.95
        assert s.ci_low < s.point < s.ci_high

    def test_statistic_failure_names_replicate(self):
        em = ErrorModel(("A", "B"), np.array([[0.0, 1.0], [0.0, 1.0]]))

        def fragile(labels, covariates):
            if "A" not in labels:
                raise ValueError("boom")
            return {"stat": 0.0}

        with pytest.raises(DataError, match="replicate 0"):
            bootstrap_ci(["A", "B"], [{}] * 2, em, fragile,
                         BootstrapConfig(n_replicates=5, seed=0))

    def test_too_few_replicates_rejected(self):
        with pytest.raises(ConfigError):
            BootstrapConfig(n_replicates=1)

    def test_json_round_trip(self, tmp_path):
        result = bootstrap_ci(["A", "B"] * 10, [{}] * 20, identity_model(),
                              proportion_of("A"),
                              BootstrapConfig(n_replicates=10, seed=0))
        result.to_json(tmp_path / "boot.json")
        import json
        data = json.loads((tmp_path / "boot.json").read_text())
        assert data["statistics"]["prop_A"]["point"] == 0.5
        assert data["config"]["n_replicates"] == 10
