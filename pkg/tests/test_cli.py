import json

import numpy as np
import pytest

from attnseg import cli
from attnseg.alignment import AlignmentMatrix, read_matrices
from attnseg.synthcorpus import SynthSpec, generate


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    spec = SynthSpec(lexicon_size=5, alphabet_size=4, word_length=(1, 2), sentence_length=(1, 3), sentences=16)
    return generate(spec).write(d)


def args(files, out, *extra):
    return ["--source", files["source"], "--target", files["target"], "--gold", files["gold"],
            "--out", str(out), "--max-epochs", "2", *extra]


def test_run_all(files, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run-all", *args(files, out, "--smooth", "--temperature", "10")]) == 0
    for stage_files in cli.OUTPUTS.values():
        for name in stage_files:
            assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["smooth"] is True
    assert set(manifest["stages"]) == set(cli.STAGES)
    kv = dict(ln.split("=", 1) for ln in (out / "report.kv").read_text().splitlines())
    assert 0 <= float(kv["token_fscore"]) <= 1
    assert "types" in capsys.readouterr().out


def test_rerun_is_identical_and_resumes(files, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["run-all", *args(files, out, "--seed", "3")]) == 0
    for name in ("trace.tsv", "matrices.txt", "segmentation.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    stamp = (a / "model.npz").stat().st_mtime_ns
    # only segmentation-level settings changed: training is not repeated
    assert cli.main(["run-all", *args(files, a, "--seed", "3", "--smooth")]) == 0
    assert (a / "model.npz").stat().st_mtime_ns == stamp
    assert json.loads((a / "manifest.json").read_text())["stages"]["segment"]["keys"]["smooth"] is True


def test_config_file(files, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# pipeline\nsource = {files['source']}\ntarget = {files['target']}\n"
                    f"gold = {files['gold']}\npreset = base\nmax_epochs = 1\nout = {tmp_path / 'o'}\n")
    assert cli.main(["prepare", "--config", str(conf)]) == 0
    assert cli.main(["train", "--config", str(conf), "--preset", "reverse"]) == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["stages"]["train"]["keys"]["preset"] == "reverse"


def test_out_from_environment(files, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["prepare", "--source", files["source"], "--target", files["target"],
                     "--gold", files["gold"]]) == 0
    assert (tmp_path / "env" / "corpus.json").exists()


def test_missing_gold_fails_before_training(files, tmp_path, capsys):
    out = tmp_path / "x"
    code = cli.main(["run-all", "--source", files["source"], "--target", files["target"],
                     "--gold", str(tmp_path / "nope.txt"), "--out", str(out)])
    assert code == 1
    assert "gold" in capsys.readouterr().err
    assert not (out / "model.npz").exists()
    assert cli.main(["run-all", "--source", files["source"], "--target", files["target"], "--out", str(out)]) == 1


@pytest.mark.parametrize("bad", [["--temperature", "0"], ["--supervise-k", "-1"]])
def test_validation_errors(files, tmp_path, bad):
    assert cli.main(["prepare", *args(files, tmp_path / "v", *bad)]) == 1


def test_bad_config_file(tmp_path):
    conf = tmp_path / "c"
    conf.write_text("colour = blue\n")
    assert cli.main(["prepare", "--config", str(conf)]) == 1


def test_stage_without_inputs(tmp_path):
    assert cli.main(["extract", "--out", str(tmp_path / "empty")]) == 1


def test_runtime_failure_exit_code(files, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(cli, "train", boom)
    code = cli.main(["run-all", *args(files, tmp_path / "r")])
    assert code == 2


def test_supervised_run(files, tmp_path):
    out = tmp_path / "k"
    assert cli.main(["run-all", *args(files, out, "--supervise-k", "2")]) == 0
    kv = dict(ln.split("=", 1) for ln in (out / "report.kv").read_text().splitlines())
    assert "token_fscore" not in kv and kv["excluded_types"] == "2"


def test_smooth_and_fuse_tools(tmp_path):
    from attnseg.alignment import write_matrices

    b = AlignmentMatrix(np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 1.0], [0, 0, 0]]), ["x", "y", "</s>"],
                        list("abc"), eos_row=True, direction="base")
    r = AlignmentMatrix(np.array([[1.0, 0], [0, 1], [0, 1], [0.5, 0.5]]), list("abc") + ["</s>"],
                        ["x", "y"], eos_row=True, direction="reverse")
    write_matrices(tmp_path / "b.txt", [b])
    write_matrices(tmp_path / "r.txt", [r])
    assert cli.main(["fuse", str(tmp_path / "b.txt"), str(tmp_path / "r.txt"), str(tmp_path / "f.txt")]) == 0
    fused = read_matrices(tmp_path / "f.txt")[0]
    np.testing.assert_allclose(fused.probs, [[0.95, 0.05], [0.05, 0.95], [0, 1]])
    assert cli.main(["smooth", str(tmp_path / "r.txt"), str(tmp_path / "s.txt"), "--axis", "row"]) == 0
    np.testing.assert_allclose(read_matrices(tmp_path / "s.txt")[0].probs[0], [1 / 3, 1 / 3])
    assert cli.main(["fuse", str(tmp_path / "b.txt"), str(tmp_path / "missing"), str(tmp_path / "g")]) == 1


class TestHeatmap:
    def test_uniform(self, tmp_path):
        m = AlignmentMatrix(np.full((2, 4), 0.25), ["a", "b"], list("wxyz"), eos_row=False, direction="base")
        pgm, _ = cli.export_heatmap(m, tmp_path / "u")
        img = cli.read_pgm(pgm)
        assert img.shape == (2, 4) and len(np.unique(img)) == 1

    def test_one_hot(self, tmp_path):
        m = AlignmentMatrix(np.eye(3)[[0, 2, 1]], list("abc"), list("xyz"), eos_row=False, direction="reverse")
        pgm, tsv = cli.export_heatmap(m, tmp_path / "h")
        img = cli.read_pgm(pgm)
        assert (img == 0).sum(axis=1).tolist() == [1, 1, 1]
        assert np.all(img[m.probs == 0] == 255)

    def test_monotone_and_table(self, tmp_path):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(6), size=4)
        m = AlignmentMatrix(p, list("abcd"), list("uvwxyz"), eos_row=False, direction="reverse")
        pgm, tsv = cli.export_heatmap(m, tmp_path / "t.pgm")
        img = cli.read_pgm(pgm).ravel()
        order = np.argsort(p.ravel())
        assert np.all(np.diff(img[order]) <= 0)
        rows, cols, values = cli.read_heatmap_table(tsv)
        assert rows == list("abcd") and cols == list("uvwxyz")
        np.testing.assert_array_equal(values, p)

    def test_command(self, files, tmp_path, capsys):
        out = tmp_path / "hm"
        assert cli.main(["run-all", *args(files, out)]) == 0
        assert cli.main(["heatmap", "--out", str(out), "--index", "1"]) == 0
        assert (out / "heatmap_1.pgm").exists() and (out / "heatmap_1.tsv").exists()
        assert cli.main(["heatmap", "--out", str(out), "--index", "999"]) == 1

    def test_unwritable(self, tmp_path):
        m = AlignmentMatrix(np.ones((1, 1)), ["a"], ["b"], eos_row=False, direction="base")
        with pytest.raises(cli.StageError):
            cli.export_heatmap(m, tmp_path / "no" / "such" / "dir" / "h")
