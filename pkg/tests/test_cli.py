import numpy as np
import pytest

from sphere_grouping import io
from sphere_grouping.cli import main, merged_config
from sphere_grouping.errors import InputError
from sphere_grouping.toy import mean_shift_modes


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


class TestMargin:
    @pytest.mark.parametrize("n,text", [(4, "lower=0.093"), (5, "lower=0.274")])
    def test_table(self, capsys, n, text):
        code, out = run(capsys, "margin", "--n", n)
        assert code == 0 and text in out.out

    def test_vacuous(self, capsys):
        code, out = run(capsys, "margin", "--n", 4, "--C", 100)
        assert code == 2 and "vacuous" in out.err

    def test_missing_n(self, capsys):
        assert run(capsys, "margin")[0] == 2

    def test_unknown_flag(self, capsys):
        assert run(capsys, "margin", "--n", 4, "--bogus", 1)[0] == 2


class TestConfigMerge:
    def test_flags_win(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("alpha=0.3\nloops=2\n")
        merged = merged_config("train", cfg, {"loops": 7, "alpha": None})
        assert merged["alpha"] == 0.3 and merged["loops"] == 7

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        cfg.write_text("alphaa=0.3\n")
        with pytest.raises(InputError):
            merged_config("train", cfg, {})
        assert run(capsys, "margin", "--n", 4, "--config", cfg)[0] == 2

    def test_bad_value(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("loops=many\n")
        with pytest.raises(InputError):
            merged_config("train", cfg, {})


class TestGradcheck:
    def test_pass(self, capsys):
        code, out = run(capsys, "gradcheck", "--instances", 3)
        assert code == 0
        for name in ("similarity", "loss", "gbms_step", "unroll", "net"):
            assert name in out.out
        assert out.out.strip().endswith("PASS")

    def test_three_loops(self, capsys):
        assert run(capsys, "gradcheck", "--instances", 2, "--loops", 3)[0] == 0

    def test_fault(self, capsys):
        code, out = run(capsys, "gradcheck", "--instances", 2, "--fault", "gbms_step")
        assert code == 1 and "FAIL: gbms_step" in out.out


class TestToy1d:
    def _verdicts(self, out_dir):
        rows = {r["regime"]: r for r in io.read_table(out_dir / "toy1d_summary.csv")}
        traj = np.loadtxt(out_dir / "toy1d_no_gbms.csv", delimiter=",", skiprows=1)
        return rows, traj

    def test_default(self, tmp_path, capsys):
        code, _ = run(capsys, "toy1d", "--out-dir", tmp_path)
        assert code == 0
        rows, traj = self._verdicts(tmp_path)
        assert len(rows) == 7
        assert int(rows["no_gbms"]["modes"]) == 3
        assert float(rows["gbms_t5_all_loops"]["max_dev"]) < 0.1
        assert len(mean_shift_modes(traj[-1, 1:])) == 3
        for name in rows:
            assert (tmp_path / f"toy1d_{name}.csv").exists()

    def test_seed_change(self, tmp_path, capsys):
        run(capsys, "toy1d", "--out-dir", tmp_path / "a", "--seed", 0)
        run(capsys, "toy1d", "--out-dir", tmp_path / "b", "--seed", 1)
        ra, ta = self._verdicts(tmp_path / "a")
        rb, tb = self._verdicts(tmp_path / "b")
        assert not np.array_equal(ta, tb)
        for r in (ra, rb):
            assert int(r["no_gbms"]["modes"]) == 3
            assert float(r["gbms_t5_all_loops"]["max_dev"]) < 0.1

    def test_svg(self, tmp_path, capsys):
        run(capsys, "toy1d", "--out-dir", tmp_path, "--steps", 2, "--svg", "true")
        assert (tmp_path / "toy1d_no_gbms_loss.svg").read_text().startswith("<svg")


class TestScenes:
    def test_gen(self, tmp_path, capsys):
        assert run(capsys, "gen", "--train-scenes", 2, "--out-dir", tmp_path)[0] == 0
        mask = io.read_pgm(tmp_path / "scene_001_mask.pgm")
        assert mask.shape == (24, 24) and mask.max() >= 2
        assert io.read_embedding_csv(tmp_path / "scene_001_features.csv").shape == (5, 576)

    def test_train_eval_proposals(self, tmp_path, capsys):
        common = ["--steps", 10, "--train-scenes", 2, "--test-scenes", 2, "--sample-size", 64, "--hidden", 8]
        code, out = run(capsys, "train", "--out-dir", tmp_path / "a", *common)
        assert code == 0 and "mean_best_iou=" in out.out
        for name in ("net.csv", "loss_curve.csv", "metrics.csv", "recall.csv", "histogram.csv", "per_scene.csv"):
            assert (tmp_path / "a" / name).exists(), name
        # rerunning reproduces every artifact byte for byte
        run(capsys, "train", "--out-dir", tmp_path / "b", *common)
        for name in ("net.csv", "loss_curve.csv", "metrics.csv", "histogram.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

        code, _ = run(capsys, "eval", "--out-dir", tmp_path / "a", "--test-scenes", 2, "--hidden", 8)
        assert code == 0
        code, out = run(capsys, "proposals", "--out-dir", tmp_path / "a", "--test-scenes", 1, "--betas", "3,12")
        assert code == 0 and "proposals" in out.out
        assert (tmp_path / "a" / "proposals_000" / "proposals.csv").exists()

    def test_ablation_flag(self, tmp_path, capsys):
        code, _ = run(capsys, "train", "--out-dir", tmp_path, "--loops", 0, "--steps", 3,
                      "--train-scenes", 1, "--test-scenes", 1, "--hidden", 4)
        assert code == 0

    def test_eval_fixture(self, tmp_path, capsys):
        img = np.zeros((6, 6), dtype=np.uint16)
        img[:3, :3] = 1
        img[3:, 2:] = 2
        io.write_pgm16(tmp_path / "gt.pgm", img)
        code, out = run(capsys, "eval", "--pred", tmp_path / "gt.pgm", "--gt", tmp_path / "gt.pgm",
                        "--out-dir", tmp_path / "e")
        assert code == 0 and "average_recall=1.0000" in out.out

    def test_eval_fixture_needs_both(self, tmp_path, capsys):
        assert run(capsys, "eval", "--pred", tmp_path / "x.pgm", "--out-dir", tmp_path)[0] == 2

    def test_missing_net(self, tmp_path, capsys):
        assert run(capsys, "eval", "--out-dir", tmp_path, "--test-scenes", 1)[0] == 2

    def test_thread_cap(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("SPHERE_GROUPING_THREADS", "1")
        assert run(capsys, "margin", "--n", 6)[0] == 0
