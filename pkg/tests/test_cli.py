import json

import pytest

from rtnpose import synth
from rtnpose.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def rot_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("rot")
    assert main(["dataset", "rotlabel", "--k", "3", "--families", "box,cone", "--per-family", "3",
                 "--per-shape", "2", "--points", "64", "--seed", "2", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def checkpoint(rot_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "m.rtnc"
    assert main(["train", "--data", str(rot_dir), "--profile", "tiny", "--epochs", "1", "--batch", "4",
                 "--out", str(path)]) == 0
    return path


class TestCodec:
    @pytest.mark.parametrize("k,n", [(6, 744), (9, 2628), (4, 208), (3, 84)])
    def test_info(self, capsys, k, n):
        code, out, err = run(capsys, "codec", "info", "--k", k)
        assert code == 0
        assert json.loads(out)["n"] == n
        assert err.startswith("config: ")

    def test_quantize_identity(self, capsys):
        code, out, _ = run(capsys, "codec", "quantize", "--k", 6, "--alpha", 0, "--beta", 0, "--gamma", 0)
        assert (code, json.loads(out)) == (0, 0)

    def test_declass_last(self, capsys):
        code, out, _ = run(capsys, "codec", "declass", "--k", 3, "--id", 83)
        d = json.loads(out)
        assert code == 0 and d["beta"] == pytest.approx(3.141592653589793) and d["gamma"] == 0.0
        assert d["alpha"] == pytest.approx(5 * 3.141592653589793 / 3)

    def test_usage_errors(self, capsys):
        assert run(capsys, "codec", "info", "--k", 1)[0] == 2
        assert run(capsys, "codec", "info", "--k", "six")[0] == 2
        assert run(capsys, "codec", "info", "--k", 3, "--bogus")[0] == 2
        assert run(capsys, "frobnicate")[0] == 2

    def test_domain_error(self, capsys):
        code, _, err = run(capsys, "codec", "declass", "--k", 3, "--id", 84)
        assert code == 1 and "out of range" in err
        assert run(capsys, "codec", "quantize", "--k", 3, "--alpha", 7, "--beta", 0, "--gamma", 0)[0] == 1


class TestSynth:
    def test_counts_and_determinism(self, capsys, tmp_path):
        args = ["synth", "--families", "box,cone", "--per-family", 4, "--points", 256, "--seed", 1]
        assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
        assert len(list((tmp_path / "a" / "clouds").glob("*.xyz"))) == 8
        assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
        assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()
        recs = [json.loads(l) for l in (tmp_path / "a" / "manifest.jsonl").read_text().splitlines()]
        assert [r["family_label"] for r in recs] == [0] * 4 + [1] * 4

    def test_unknown_family(self, capsys, tmp_path):
        assert run(capsys, "synth", "--families", "teapot", "--out", tmp_path)[0] == 2

    def test_rotlabel_mode(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", "--mode", "rotlabel", "--families", "box", "--per-family", 2,
                           "--points", 32, "--out", tmp_path)
        assert code == 0 and json.loads(out)["samples"] == 8

    def test_dataset_labels_in_range(self, rot_dir):
        samples, k = synth.read_manifest(rot_dir)
        assert k == 3 and len(samples) == 12
        assert all(0 <= s.label < 84 for s in samples)


class TestTrainEval:
    def test_train_outputs(self, checkpoint):
        assert checkpoint.read_bytes()[:4] == b"RTNC"
        lines = checkpoint.with_suffix(".csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,val_top1" and len(lines) == 3

    def test_eval_oracle(self, capsys, rot_dir):
        code, out, _ = run(capsys, "eval", "--data", rot_dir, "--oracle")
        d = json.loads(out)
        assert code == 0 and d["top1"] == 1.0 and d["mean_outcd"] < d["mean_incd"]

    def test_eval_model_byte_identical(self, capsys, rot_dir, checkpoint):
        _, a, _ = run(capsys, "eval", "--data", rot_dir, "--model", checkpoint, "--jobs", 1)
        _, b, _ = run(capsys, "eval", "--data", rot_dir, "--model", checkpoint, "--jobs", 1)
        assert a == b and json.loads(a)["n_samples"] == 12

    def test_eval_grid_mismatch(self, capsys, tmp_path, checkpoint):
        assert main(["dataset", "rotlabel", "--k", "4", "--families", "box", "--per-family", "1",
                     "--per-shape", "1", "--points", "64", "--out", str(tmp_path)]) == 0
        code, _, err = run(capsys, "eval", "--data", tmp_path, "--model", checkpoint)
        assert code == 1 and "grid" in err

    def test_eval_needs_model(self, capsys, rot_dir):
        assert run(capsys, "eval", "--data", rot_dir)[0] == 1

    def test_corrupt_checkpoint(self, capsys, tmp_path, rot_dir, checkpoint):
        bad = tmp_path / "bad.rtnc"
        bad.write_bytes(checkpoint.read_bytes()[:-10])
        code, _, err = run(capsys, "eval", "--data", rot_dir, "--model", bad)
        assert code == 1 and "payload" in err

    def test_normalize(self, capsys, tmp_path, checkpoint):
        src = tmp_path / "in.xyz"
        src.write_text("".join(f"{i} {i * i % 7} {i % 3}\n" for i in range(40)))
        code, out, _ = run(capsys, "normalize", "--model", checkpoint, "--in", src, "--out", tmp_path / "out.xyz")
        d = json.loads(out)
        assert code == 0 and 0 <= d["class"] < 84
        assert len((tmp_path / "out.xyz").read_text().splitlines()) == 40

    def test_missing_input(self, capsys, tmp_path, checkpoint):
        assert run(capsys, "normalize", "--model", checkpoint, "--in", tmp_path / "nope.xyz", "--out", tmp_path / "o.xyz")[0] == 1


class TestTools:
    def test_gradcheck(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--profile", "tiny", "--seed", 0)
        d = json.loads(out)
        assert code == 0 and d["max_rel_error"] < 1e-2

    def test_gradcheck_failure_exit(self, capsys):
        assert run(capsys, "gradcheck", "--profile", "tiny", "--tolerance", 1e-12)[0] == 1

    def test_cd(self, capsys, tmp_path):
        f = tmp_path / "f.xyz"
        f.write_text("0 0 0\n1 0 0\n")
        code, out, _ = run(capsys, "cd", "--a", f, "--b", f)
        assert code == 0 and json.loads(out) == 0.0

    def test_cd_parse_error(self, capsys, tmp_path):
        f = tmp_path / "f.xyz"
        f.write_text("0 0 zero\n")
        code, _, err = run(capsys, "cd", "--a", f, "--b", f)
        assert code == 1 and "f.xyz:1" in err
