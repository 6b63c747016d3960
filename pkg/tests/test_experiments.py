import numpy as np
import pytest

from aspect_ep.experiments import (
    EXPERIMENTS,
    SCENARIOS,
    ReproSummary,
    make_scenario,
    repro_fig1,
    run_experiment,
    sub_seed,
    two_word_model,
    write_scenario,
)


class TestScenarios:
    def test_two_word(self):
        train = make_scenario("two-word", 0)["train"]
        counts = train.count_matrix()
        assert counts.shape == (10, 2)
        assert np.all(counts.sum(axis=1) == 10)
        # aspect 1 only emits word 0, so word 0 is at least as frequent as under p = 0.5
        assert counts[:, 0].sum() > 50

    def test_five_word(self):
        data = make_scenario("five-word", 0)
        assert data["train"].count_matrix().shape == (100, 5)
        assert data["test"].count_matrix().shape == (1000, 5)
        assert set(data["test"].count_matrix().sum(axis=1)) == {100.0}

    def test_two_class(self):
        data = make_scenario("two-class", 0)
        assert len(data["train_0"]) == len(data["train_1"]) == 50
        assert len(data["test"]) == 2000
        assert np.bincount(data["test"].labels).tolist() == [1000, 1000]
        # the second class leans towards the last word
        freq = data["train_1"].unigram()
        assert np.all(np.diff(freq) > 0)

    def test_concat_topics(self):
        data = make_scenario("concat-topics", 0)
        train = data["train"].count_matrix()
        assert train.shape[0] == 200
        assert np.all(train.sum(axis=1) == 180)

    @pytest.mark.parametrize("name", SCENARIOS)
    def test_deterministic(self, name):
        a, b = make_scenario(name, 4), make_scenario(name, 4)
        for part in a:
            assert np.array_equal(a[part].count_matrix(), b[part].count_matrix())

    def test_train_and_test_streams_differ(self):
        data = make_scenario("five-word", 0)
        assert not np.array_equal(data["train"].count_matrix(), data["test"].count_matrix()[:100])

    def test_unknown(self):
        with pytest.raises(ValueError, match="two-word"):
            make_scenario("three-word")

    def test_write(self, tmp_path):
        paths = write_scenario("two-class", 1, tmp_path)
        assert sorted(p.name for p in paths) == ["two-class_test.bow", "two-class_train_0.bow",
                                                 "two-class_train_1.bow"]


def test_sub_seed():
    assert sub_seed(0, "a") == sub_seed(0, "a")
    assert len({sub_seed(0, "a"), sub_seed(0, "b"), sub_seed(1, "a"), sub_seed(0, "a", 1)}) == 4


def test_two_word_model():
    m = two_word_model()
    assert np.array_equal(m.word_probs, [[0.5, 0.5], [1.0, 0.0]])


def test_summary_text():
    s = ReproSummary("demo", 3)
    s.notes["x"] = 0.123456789
    s.check("good", 1.0, "<= 2", True)
    s.check("bad", [1, 2], "increasing", False)
    assert not s.passed
    text = s.text()
    assert "experiment demo  seed 3" in text
    assert "PASS  good: 1 (target <= 2)" in text
    assert "FAIL  bad: [1, 2]" in text
    assert "x: 0.123457" in text


def test_fig1_quick(tmp_path):
    s = repro_fig1(seed=0, n_seeds=2, grid_points=21, outdir=tmp_path)
    names = [c.name for c in s.checks]
    assert "min (exact - VB)" in names
    assert next(c for c in s.checks if c.name == "min (exact - VB)").passed
    assert (tmp_path / "fig1_curve.csv").exists()
    assert (tmp_path / "fig1_estimates.csv").read_text().startswith("# experiment fig1 seed 0")


def test_unknown_experiment():
    assert "fig1" in EXPERIMENTS
    with pytest.raises(ValueError):
        run_experiment("fig2")
