import json
import os

import numpy as np
import pytest

from nrsfm_isa import formats
from nrsfm_isa.cli import main
from nrsfm_isa.errors import InputError
from nrsfm_isa.isa import off_block_energy


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def scene_files(tmp_path, capsys):
    tracks, truth = tmp_path / "t.csv", tmp_path / "truth.json"
    code, _, _ = run(capsys, "synth", "--i", 40, "--j", 120, "--k", 2, "--seed", 7,
                     "--out-tracks", tracks, "--out-truth", truth)
    assert code == 0
    return tracks, truth


class TestTrackFormat:
    def test_round_trip(self, tmp_path, rng):
        W = rng.standard_normal((6, 5)) * 10 ** rng.uniform(-8, 8, (6, 5))
        p = tmp_path / "w.csv"
        formats.write_tracks(p, W, frame_ids=["a", "b", "c"])
        W2, frames = formats.read_tracks(p)
        assert frames == ["a", "b", "c"]
        np.testing.assert_allclose(W2, W, rtol=1e-15, atol=0)

    def test_header(self, tmp_path):
        p = tmp_path / "w.csv"
        formats.write_tracks(p, np.zeros((4, 3)))
        assert p.read_text().splitlines()[0] == "# I=2 J=3"

    @pytest.mark.parametrize("body, match", [
        ("1,2,3\n", "line 1"),
        ("# I=1 J=3\n1,2,3\n", "expected 2 data rows"),
        ("# I=1 J=3\n1,2,3\n4,5\n", "line 3 \\(data row 2\\)"),
        ("# I=1 J=3\n1,2,3\n4,x,6\n", "line 3"),
        ("# I=1 J=3\n1,2,nan\n4,5,6\n", "non-finite"),
        ("", "empty"),
    ])
    def test_malformed(self, tmp_path, body, match):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(InputError, match=match):
            formats.read_tracks(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            formats.read_tracks(tmp_path / "nope.csv")


class TestAtomicWrite:
    def test_failure_leaves_no_partial_file(self, tmp_path, monkeypatch):
        target = tmp_path / "out.txt"
        target.write_text("old")

        def boom(*a):
            raise OSError("disk full")

        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(OSError):
            formats.atomic_write(target, "new")
        assert target.read_text() == "old"
        assert os.listdir(tmp_path) == ["out.txt"]


class TestModelFile:
    def test_round_trip_identical(self, scene_files, tmp_path):
        _, truth = scene_files
        model, cfg = formats.load_model(truth)
        again = tmp_path / "again.json"
        formats.save_model(again, model, cfg)
        assert again.read_text() == truth.read_text()
        m2, _ = formats.load_model(again)
        for a, b in [(model.rigid.M0, m2.rigid.M0), (model.blocks.D, m2.blocks.D),
                     (model.separation.B_isa, m2.separation.B_isa)]:
            assert np.array_equal(a, b)

    def test_fields(self, scene_files):
        doc = json.loads(scene_files[1].read_text())
        for key in ("M0", "B0", "B_isa", "D", "D_inv", "alpha", "translations", "config",
                    "diagnostics", "C"):
            assert key in doc
        assert np.shape(doc["D"]) == (2, 3, 3)

    def test_bad_document(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"format": "other"}')
        with pytest.raises(InputError):
            formats.load_model(p)
        p.write_text("{not json")
        with pytest.raises(InputError):
            formats.load_model(p)


class TestSynthCommand:
    def test_byte_identical(self, tmp_path, capsys):
        outs = []
        for n in range(2):
            t, g = tmp_path / f"t{n}.csv", tmp_path / f"g{n}.json"
            assert run(capsys, "synth", "--i", 10, "--j", 40, "--k", 1, "--seed", 3,
                       "--noise", 0.01, "--out-tracks", t, "--out-truth", g)[0] == 0
            outs.append((t.read_bytes(), g.read_bytes()))
        assert outs[0] == outs[1]

    def test_rank_check(self, scene_files, capsys):
        code, out, _ = run(capsys, "eval", scene_files[0], "--check-rank", "--k", 2, "--json")
        assert code == 0 and json.loads(out)["passed"]

    def test_rank_check_fails_on_noise(self, tmp_path, capsys):
        t = tmp_path / "n.csv"
        run(capsys, "synth", "--i", 10, "--j", 40, "--k", 1, "--noise", 0.01, "--out-tracks", t)
        assert run(capsys, "eval", t, "--check-rank", "--k", 1)[0] == 1

    def test_guard(self, capsys):
        code, _, err = run(capsys, "synth", "--i", 10, "--j", 5, "--k", 2)
        assert code == 3
        assert json.loads(err)["exit_code"] == 3

    def test_stdout(self, capsys):
        code, out, _ = run(capsys, "synth", "--i", 3, "--j", 12, "--k", 1)
        assert code == 0 and out.startswith("# I=3 J=12\n") and len(out.splitlines()) == 7

    def test_env_seed(self, tmp_path, capsys, monkeypatch):
        a, b, c = (tmp_path / f"{n}.csv" for n in "abc")
        monkeypatch.setenv("NRSFM_SEED", "9")
        run(capsys, "synth", "--i", 12, "--j", 24, "--k", 1, "--out-tracks", a)
        run(capsys, "synth", "--i", 12, "--j", 24, "--k", 1, "--seed", 9, "--out-tracks", b)
        run(capsys, "synth", "--i", 12, "--j", 24, "--k", 1, "--seed", 8, "--out-tracks", c)
        assert a.read_bytes() == b.read_bytes() != c.read_bytes()

    def test_bad_env_seed(self, capsys, monkeypatch):
        monkeypatch.setenv("NRSFM_SEED", "abc")
        assert run(capsys, "synth", "--i", 12, "--j", 24, "--k", 1)[0] == 3


class TestReconstructCommand:
    def test_end_to_end(self, scene_files, tmp_path, capsys):
        tracks, _ = scene_files
        model, rep = tmp_path / "m.json", tmp_path / "r.json"
        code, out, _ = run(capsys, "reconstruct", tracks, "--k", 2, "--method", "isa2",
                           "--seed", 7, "--out", model, "--report-json", rep)
        assert code == 0
        assert "inverse SNR" in out
        report = json.loads(rep.read_text())
        assert report["inverse_snr_percent"] < 0.1
        assert "timings" in report

        code, out, _ = run(capsys, "eval", tracks, "--model", model, "--json")
        again = json.loads(out)
        report.pop("timings")
        again.pop("timings")
        assert again == report

    def test_ragged(self, scene_files, tmp_path, capsys):
        lines = scene_files[0].read_text().splitlines()
        lines[4] = lines[4].rsplit(",", 1)[0]
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join(lines) + "\n")
        code, _, err = run(capsys, "reconstruct", bad, "--k", 2)
        doc = json.loads(err)
        assert code == 2 and doc["exit_code"] == 2
        assert "line 5" in doc["message"] and "data row 4" in doc["message"]

    def test_k_too_large(self, scene_files, capsys):
        code, _, err = run(capsys, "reconstruct", scene_files[0], "--k", 40)
        assert code == 3
        assert "3K + 3" in json.loads(err)["message"]

    def test_usage_error(self, capsys):
        code, _, err = run(capsys, "reconstruct")
        assert code == 2 and "required" in json.loads(err)["message"]

    def test_tolerance_overrides(self, scene_files, tmp_path, capsys):
        model = tmp_path / "m.json"
        code, out, _ = run(capsys, "reconstruct", scene_files[0], "--k", 2, "--out", model,
                           "--refine-max-iter", 3, "--ica-tol", 1e-6, "--contrast", "cube",
                           "--json")
        assert code == 0
        cfg = json.loads(model.read_text())["config"]
        assert cfg["refine"]["max_iter"] == 3 and cfg["ica"]["contrast"] == "cube"

    def test_numerical_failure_exit_code(self, scene_files, capsys, monkeypatch):
        import nrsfm_isa.cli as cli

        def fail(*a, **k):
            raise np.linalg.LinAlgError("SVD did not converge")

        monkeypatch.setattr(cli, "reconstruct", fail)
        assert run(capsys, "reconstruct", scene_files[0], "--k", 2)[0] == 4


class TestEvalCommand:
    def test_truth_model(self, scene_files, capsys):
        code, out, _ = run(capsys, "eval", *[scene_files[0]], "--model", scene_files[1], "--json")
        assert code == 0 and json.loads(out)["inverse_snr_percent"] < 1e-9
        code, out, _ = run(capsys, "eval", scene_files[0], "--model", scene_files[1], "--raw",
                           "--json")
        assert json.loads(out)["inverse_snr_percent"] < 1e-9

    def test_exports(self, scene_files, tmp_path, capsys):
        tracks, truth = scene_files
        cov, rep, basis = tmp_path / "c.csv", tmp_path / "r.csv", tmp_path / "b.csv"
        code, out, _ = run(capsys, "eval", tracks, "--model", truth, "--json", "--export-cov",
                           cov, "--export-reproj", rep, "--export-basis", basis)
        assert code == 0
        report = json.loads(out)
        C = formats.read_matrix_csv(cov)
        ratio = off_block_energy(C) / np.sum(C * C)
        assert abs(ratio - report["off_block_energy_ratio"]) <= 1e-12
        W, _ = formats.read_tracks(rep)
        W0, _ = formats.read_tracks(tracks)
        np.testing.assert_allclose(W, W0, atol=1e-9)
        rows = basis.read_text().splitlines()
        assert rows[0].startswith("#") and len(rows) == 1 + 3 * (1 + 2 * 2)
        assert rows[1].startswith("0,0,x,") and rows[4].startswith("1,+,x,")

    def test_basis_convention(self, scene_files):
        model, _ = formats.load_model(scene_files[1])
        text = formats.format_basis_shapes(model)
        data = np.array([[float(v) for v in ln.split(",")[3:]] for ln in text.splitlines()[1:]])
        B0 = data[0:3]
        plus, minus = data[3:6], data[6:9]
        np.testing.assert_allclose((plus + minus) / 2, B0, atol=1e-12)
        amp = np.std(model.blocks.alpha[:, 0])
        np.testing.assert_allclose((plus - minus) / (2 * amp), model.basis_shapes()[0],
                                   atol=1e-9)

    def test_mismatch(self, scene_files, tmp_path, capsys):
        other = tmp_path / "o.csv"
        run(capsys, "synth", "--i", 40, "--j", 99, "--k", 2, "--out-tracks", other)
        assert run(capsys, "eval", other, "--model", scene_files[1])[0] == 3

    def test_k_disagrees(self, scene_files, capsys):
        assert run(capsys, "eval", scene_files[0], "--model", scene_files[1], "--k", 3)[0] == 3

    def test_needs_model_or_check(self, scene_files, capsys):
        assert run(capsys, "eval", scene_files[0])[0] == 3
        assert run(capsys, "eval", scene_files[0], "--check-rank")[0] == 3

    def test_human_table(self, scene_files, capsys):
        code, out, _ = run(capsys, "eval", scene_files[0], "--model", scene_files[1],
                           "--check-rank")
        assert code == 0
        assert "off-block energy ratio" in out and "rank_check_passed" in out
