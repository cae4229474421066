"""Command-line behavior: artifact round trips, determinism, exit codes,
config merging, and the report/sweep schemas."""

import json
import os

import numpy as np
import pytest

from axrl.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from axrl.envs import load_dataset
from axrl.reports import (
    DiscriminationReport,
    N_HISTOGRAM_BINS,
    SweepCell,
    SweepResult,
    mann_whitney_auc,
    normalized_return,
    report_from_json,
    select_best,
    sweep_from_json,
)

pytestmark = pytest.mark.usefixtures("in_tmp_dir")


@pytest.fixture()
def in_tmp_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(*argv):
    return main(list(argv))


def make_dataset(path="d.bin", size=400, flavor="expert", seed=7):
    rc = run("gen-data", "--env", "pointmass2d", "--flavor", flavor,
             "--size", str(size), "--seed", str(seed), "--out", path)
    assert rc == EXIT_OK
    return path


def make_bonus_dir(dataset, out="bm", steps=200):
    rc = run("train-bonus", "--dataset", dataset, "--kind", "cvae",
             "--steps", str(steps), "--hidden", "12,12", "--latent", "2",
             "--out", out)
    assert rc == EXIT_OK
    return out


class TestReportPrimitives:
    def test_auc_perfect_and_chance(self):
        assert mann_whitney_auc([5, 6, 7], [1, 2, 3]) == 1.0
        assert mann_whitney_auc([1, 2, 3], [5, 6, 7]) == 0.0
        assert mann_whitney_auc([1.0, 2.0], [1.0, 2.0]) == 0.5

    def test_auc_matches_pair_counting(self):
        rng = np.random.default_rng(3)
        ood = rng.normal(1.0, 1.0, size=40)
        data = rng.normal(0.0, 1.0, size=30)
        wins = sum((o > d) + 0.5 * (o == d) for o in ood for d in data)
        assert mann_whitney_auc(ood, data) == pytest.approx(wins / (40 * 30))

    def test_normalized_return_scale(self):
        assert normalized_return(-50.0, -400.0, -50.0) == 1.0
        assert normalized_return(-400.0, -400.0, -50.0) == 0.0
        assert normalized_return(-225.0, -400.0, -50.0) == 0.5
        with pytest.raises(ValueError):
            normalized_return(1.0, 2.0, 2.0)

    def test_sweep_selection_invariant(self):
        cells = [SweepCell(0.1, 0.1, 0.4, 0.0, (("t", 0.4),)),
                 SweepCell(1.0, 1.0, 0.9, 0.0, (("t", 0.9),))]
        result = select_best(cells)
        assert (result.selected_beta_actor, result.selected_beta_critic) == (1.0, 1.0)
        with pytest.raises(ValueError, match="maximum"):
            SweepResult(tuple(cells), 0.1, 0.1)


class TestGenData:
    def test_writes_dataset_and_prints_metadata(self, capsys):
        make_dataset("out.bin", size=300)
        doc = json.loads(capsys.readouterr().out)
        assert doc["env"] == "pointmass2d" and doc["seed"] == 7
        assert doc["path"] == "out.bin" and doc["config_fingerprint"]
        ds = load_dataset("out.bin")
        assert len(ds) == 300
        assert ds.metadata["config_fingerprint"] == doc["config_fingerprint"]
        assert ds.metadata["fingerprint"]

    def test_repeat_invocation_identical_bytes(self):
        make_dataset("a.bin", size=250)
        make_dataset("b.bin", size=250)
        with open("a.bin", "rb") as fa, open("b.bin", "rb") as fb:
            assert fa.read() == fb.read()

    def test_unknown_env_is_usage_error(self, capsys):
        rc = run("gen-data", "--env", "cartpole", "--flavor", "expert",
                 "--size", "10")
        assert rc == EXIT_USAGE
        err = capsys.readouterr().err
        assert "pointmass2d" in err and "pendulum1" in err

    def test_unknown_flavor_and_bad_size(self):
        assert run("gen-data", "--env", "pendulum1", "--flavor", "great",
                   "--size", "10") == EXIT_USAGE
        assert run("gen-data", "--env", "pendulum1", "--flavor", "expert",
                   "--size", "0") == EXIT_USAGE

    def test_data_dir_env_var_sets_default_root(self, monkeypatch, capsys):
        monkeypatch.setenv("AXRL_DATA_DIR", "artifacts")
        rc = run("gen-data", "--env", "pointmass2d", "--flavor", "random",
                 "--size", "50", "--seed", "1")
        assert rc == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["path"].startswith("artifacts" + os.sep)
        assert os.path.exists(doc["path"])


class TestConfigMerging:
    def test_flags_win_over_config_file(self, capsys):
        with open("cfg.json", "w") as fh:
            json.dump({"env": "pendulum1", "flavor": "random", "size": 40}, fh)
        rc = run("gen-data", "--config", "cfg.json", "--env", "pointmass2d",
                 "--out", "x.bin")
        assert rc == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["env"] == "pointmass2d"
        assert doc["n_transitions"] == 40

    def test_unknown_config_key_rejected(self):
        with open("cfg.json", "w") as fh:
            json.dump({"sizee": 40}, fh)
        assert run("gen-data", "--config", "cfg.json", "--env", "pendulum1",
                   "--flavor", "random", "--size", "10") == EXIT_USAGE

    def test_missing_config_file_rejected(self):
        assert run("gen-data", "--config", "absent.json", "--env", "pendulum1",
                   "--flavor", "random", "--size", "10") == EXIT_USAGE


class TestTrainBonus:
    def test_artifacts_and_reload(self):
        ds = make_dataset(size=300)
        out = make_bonus_dir(ds)
        for name in ("model.json", "manifest.json", "training_loss.csv"):
            assert os.path.exists(os.path.join(out, name))
        from axrl.bonus import load_bonus_model
        model = load_bonus_model(out)
        assert model.kind == "cvae" and model.trained

    def test_missing_dataset_flag(self):
        assert run("train-bonus", "--kind", "cvae") == EXIT_USAGE

    def test_unreadable_dataset_is_runtime_failure(self):
        assert run("train-bonus", "--dataset", "absent.bin") == EXIT_RUNTIME


class TestEvalBonus:
    def test_report_schema_and_auc_bounds(self, capsys):
        ds = make_dataset(size=300)
        bm = make_bonus_dir(ds)
        capsys.readouterr()
        rc = run("eval-bonus", "--dataset", ds, "--model", bm,
                 "--modes", "uniform,noise:0.25,shuffled", "--seed", "3",
                 "--out", "rep")
        assert rc == EXIT_OK
        report = report_from_json(open(os.path.join("rep", "report.json")).read())
        assert isinstance(report, DiscriminationReport)
        assert report.model_kind == "cvae" and report.seed == 3
        assert len(report.bin_edges) == N_HISTOGRAM_BINS + 1
        assert report.dataset.n == 300
        names = [m.name for m in report.modes]
        assert names == ["uniform", "noise:0.25", "shuffled"]
        for mode in report.modes:
            assert 0.0 <= mode.auc_vs_dataset <= 1.0
            assert sum(mode.histogram) == mode.n

    def test_histogram_csv_columns_align(self):
        ds = make_dataset(size=200)
        bm = make_bonus_dir(ds)
        rc = run("eval-bonus", "--dataset", ds, "--model", bm,
                 "--modes", "uniform", "--seed", "1", "--out", "rep")
        assert rc == EXIT_OK
        lines = open(os.path.join("rep", "histograms.csv")).read().strip().split("\n")
        assert lines[0] == "bin_left,bin_right,dataset,uniform"
        assert len(lines) == 1 + N_HISTOGRAM_BINS
        total = sum(int(line.split(",")[2]) for line in lines[1:])
        assert total == 200

    def test_zero_noise_mode_is_chance_level(self, capsys):
        ds = make_dataset(size=250)
        bm = make_bonus_dir(ds)
        capsys.readouterr()
        rc = run("eval-bonus", "--dataset", ds, "--model", bm,
                 "--modes", "noise:0", "--seed", "2", "--out", "rep")
        assert rc == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["auc"]["noise:0"] == pytest.approx(0.5, abs=1e-12)

    def test_bad_mode_token(self):
        ds = make_dataset(size=50, flavor="random")
        assert run("eval-bonus", "--dataset", ds, "--kind", "cvae",
                   "--modes", "sideways") == EXIT_USAGE


class TestTrainCommand:
    def _train(self, out, extra=()):
        ds = make_dataset(size=400, flavor="medium")
        bm = make_bonus_dir(ds)
        rc = run("train", "--dataset", ds, "--bonus-model", bm,
                 "--steps", "40", "--batch", "16", "--hidden", "10,10",
                 "--eval-every", "20", "--eval-episodes", "2",
                 "--seed", "5", "--out", out, *extra)
        assert rc == EXIT_OK
        return ds, bm

    def test_emits_all_artifacts(self):
        self._train("run")
        for name in ("metrics.csv", "manifest.json", "state.json",
                     "actor.axrl", "critic1.axrl", "critic2.axrl",
                     "target_actor.axrl", "target_critic1.axrl",
                     "target_critic2.axrl"):
            assert os.path.exists(os.path.join("run", name)), name
        lines = open("run/metrics.csv").read().strip().split("\n")
        assert lines[0] == ("step,critic_loss,actor_bonus_mean,"
                            "critic_bonus_mean,eval_return_mean,eval_return_std")
        assert len(lines) == 3
        manifest = json.load(open("run/manifest.json"))
        assert manifest["seed"] == 5 and manifest["config_fingerprint"]
        state = json.load(open("run/state.json"))
        assert state["step"] == 40 and state["env"] == "pointmass2d"

    def test_manifest_replay_bit_identical_metrics(self):
        self._train("run1")
        rc = run("train", "--replay", os.path.join("run1", "manifest.json"),
                 "--out", "run2")
        assert rc == EXIT_OK
        with open("run1/metrics.csv", "rb") as fa, \
                open("run2/metrics.csv", "rb") as fb:
            assert fa.read() == fb.read()
        for name in ("actor.axrl", "critic1.axrl"):
            with open(os.path.join("run1", name), "rb") as fa, \
                    open(os.path.join("run2", name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_eval_policy_reads_checkpoint(self, capsys):
        self._train("run")
        capsys.readouterr()
        rc = run("eval-policy", "--checkpoint", "run", "--episodes", "3",
                 "--seed", "2")
        assert rc == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["returns"]) == 3
        assert doc["mean"] == pytest.approx(np.mean(doc["returns"]))
        rc2 = run("eval-policy", "--checkpoint", "run", "--episodes", "3",
                  "--seed", "2")
        assert rc2 == EXIT_OK
        doc2 = json.loads(capsys.readouterr().out)
        assert doc2["returns"] == doc["returns"]

    def test_missing_required_flags(self):
        assert run("train", "--steps", "5") == EXIT_USAGE

    def test_bad_subcommand_and_no_command(self):
        assert run("frobnicate") == EXIT_USAGE
        assert run() == EXIT_USAGE


class TestSweep:
    def test_single_cell_selects_it(self, capsys):
        ds = make_dataset(size=300)
        rc = run("sweep", "--datasets", ds, "--grid", "0.5", "--seeds", "0",
                 "--steps", "30", "--batch", "16", "--hidden", "8,8",
                 "--bonus-steps", "100", "--reference-episodes", "3",
                 "--out", "sweep.json")
        assert rc == EXIT_OK
        result, seed = sweep_from_json(open("sweep.json").read())
        assert len(result.cells) == 1
        assert result.selected_beta_actor == 0.5
        assert result.selected_beta_critic == 0.5
        assert result.cells[0].per_task[0][0] == "pointmass2d-expert"

    def test_grid_is_cross_product(self):
        ds = make_dataset(size=300)
        rc = run("sweep", "--datasets", ds, "--grid", "0,1", "--seeds", "0",
                 "--steps", "20", "--batch", "16", "--hidden", "8,8",
                 "--bonus-steps", "100", "--reference-episodes", "3",
                 "--out", "sweep.json")
        assert rc == EXIT_OK
        result, _ = sweep_from_json(open("sweep.json").read())
        pairs = {(c.beta_actor, c.beta_critic) for c in result.cells}
        assert pairs == {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)}

    def test_empty_dataset_list_is_usage_error(self):
        assert run("sweep", "--datasets", "", "--grid", "1",
                   "--seeds", "0") == EXIT_USAGE


class TestVerifyDp:
    def test_all_checks_pass_with_table(self, capsys):
        rc = run("verify-dp", "--n-mdps", "8", "--seed", "3", "--out", "v.csv")
        assert rc == EXIT_OK
        lines = open("v.csv").read().strip().split("\n")
        assert lines[0] == "check,passed,failed"
        rows = {line.split(",")[0]: line.split(",")[1:] for line in lines[1:]}
        assert set(rows) == {"equivalence", "fixed-point", "rewrite-identity",
                             "zero-temperature-limit", "zero-bonus-control"}
        for name, (n_pass, n_fail) in rows.items():
            assert (int(n_pass), int(n_fail)) == (8, 0), name
        doc = json.loads(capsys.readouterr().out)
        assert doc["seed"] == 3 and doc["config_fingerprint"]
        assert os.path.exists("v.json")

    def test_deterministic_given_seed(self, capsys):
        assert run("verify-dp", "--n-mdps", "5", "--seed", "9",
                   "--out", "a.csv") == EXIT_OK
        assert run("verify-dp", "--n-mdps", "5", "--seed", "9",
                   "--out", "b.csv") == EXIT_OK
        assert open("a.csv").read() == open("b.csv").read()
