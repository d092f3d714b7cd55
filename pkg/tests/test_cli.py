import struct
from pathlib import Path

import pytest

from afftrack.cli import EXIT_CHECK_FAILED, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from afftrack.data import load_sequence, parse_mot_csv
from afftrack.weightfile import load_tensors


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes") / "seq"
    assert run("synth", "--out", out, "--frames", "40", "--objects", "3",
               "--seed", "3", "--det-dropout", "0") == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, scene):
    out = tmp_path_factory.mktemp("models") / "model.bin"
    config = out.parent / "train.cfg"
    config.write_text(
        "profile = toy\n"
        "pairs = 4\n"
        "epochs = 0\n"
        "batch_size = 4\n"
        "# comment lines are fine\n"
    )
    assert run("train", "--data", scene, "--config", config, "--out", out) == EXIT_OK
    return out


class TestSynth:
    def test_layout_and_determinism(self, tmp_path):
        a = tmp_path / "x" / "seq"
        b = tmp_path / "y" / "seq"
        for out in (a, b):
            assert run("synth", "--out", out, "--frames", "5", "--objects", "2", "--seed", "9") == EXIT_OK
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
        seq = load_sequence(a)
        assert len(seq) == 5

    def test_zero_objects_gives_empty_gt(self, tmp_path):
        out = tmp_path / "empty"
        assert run("synth", "--out", out, "--frames", "2", "--objects", "0", "--seed", "0") == EXIT_OK
        assert (out / "gt.csv").read_text() == ""
        assert parse_mot_csv(out / "gt.csv") == []

    def test_refuses_nonempty_target(self, tmp_path):
        out = tmp_path / "occupied"
        out.mkdir()
        (out / "existing.txt").write_text("hands off")
        assert run("synth", "--out", out, "--frames", "2", "--objects", "1", "--seed", "0") == EXIT_USAGE
        assert (out / "existing.txt").read_text() == "hands off"

    def test_invalid_config_exits_usage(self, tmp_path):
        code = run("synth", "--out", tmp_path / "bad", "--frames", "2", "--objects", "1",
                   "--seed", "0", "--width", "4", "--height", "4")
        assert code == EXIT_USAGE


class TestTrain:
    def test_zero_epochs_saves_initial_weights(self, trained):
        state = load_tensors(trained)
        assert any(k.startswith("backbone.") for k in state)
        sidecar = trained.with_suffix(trained.suffix + ".config")
        assert "profile = toy" in sidecar.read_text()
        log = trained.with_name(trained.stem + "_training_log.csv")
        assert log.read_text().splitlines()[0] == "epoch,lr,mean_loss,L_f,L_b,L_c,L_a"
        assert (trained.parent / "model_training_curves.png").exists()

    def test_learning_rate_drop_appears_in_log(self, tmp_path, scene):
        out = tmp_path / "m.bin"
        config = tmp_path / "c.cfg"
        config.write_text("profile = toy\npairs = 2\nepochs = 3\nbatch_size = 2\nlr_drops = 2\naugment = false\n")
        assert run("train", "--data", scene, "--config", config, "--out", out) == EXIT_OK
        rows = (tmp_path / "m_training_log.csv").read_text().splitlines()[1:]
        lrs = [float(r.split(",")[1]) for r in rows]
        assert lrs[0] == pytest.approx(0.01)
        assert lrs[1] == pytest.approx(0.001)
        assert lrs[2] == pytest.approx(0.001)

    def test_unknown_config_key_rejected(self, tmp_path, scene):
        config = tmp_path / "bad.cfg"
        config.write_text("profile = toy\nwrong_key = 3\n")
        assert run("train", "--data", scene, "--config", config, "--out", tmp_path / "m.bin") == EXIT_USAGE

    def test_missing_data_dir_is_io_error(self, tmp_path):
        assert run("train", "--data", tmp_path / "nope", "--out", tmp_path / "m.bin") == EXIT_IO


class TestTrack:
    def test_tracks_sequence(self, tmp_path, scene, trained):
        out = tmp_path / "tracks.csv"
        assert run("track", "--model", trained, "--seq", scene, "--dets", scene / "det.csv",
                   "--out", out) == EXIT_OK
        records = parse_mot_csv(out)
        assert records, "expected hypothesis rows"
        assert (tmp_path / "tracks_paths.png").exists()

    def test_empty_detections_give_empty_tracks(self, tmp_path, scene, trained):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        out = tmp_path / "tracks.csv"
        assert run("track", "--model", trained, "--seq", scene, "--dets", empty,
                   "--out", out, "--no-figures") == EXIT_OK
        assert out.read_text() == ""

    def test_default_windows_match_documented_values(self):
        from afftrack.cli import _build_parser

        parser = _build_parser()
        args = parser.parse_args(["track", "--model", "m", "--seq", "s", "--dets", "d", "--out", "o"])
        assert (args.delta_b, args.delta_w) == (15, 12)

    def test_version_mismatch_is_io_error(self, tmp_path, scene, trained):
        bogus = tmp_path / "bogus.bin"
        blob = bytearray(Path(trained).read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        bogus.write_bytes(bytes(blob))
        bogus.with_suffix(bogus.suffix + ".config").write_text(
            trained.with_suffix(trained.suffix + ".config").read_text())
        assert run("track", "--model", bogus, "--seq", scene, "--dets", scene / "det.csv",
                   "--out", tmp_path / "t.csv") == EXIT_IO

    def test_missing_sidecar_is_io_error(self, tmp_path, scene, trained):
        orphan = tmp_path / "orphan.bin"
        orphan.write_bytes(Path(trained).read_bytes())
        assert run("track", "--model", orphan, "--seq", scene, "--dets", scene / "det.csv",
                   "--out", tmp_path / "t.csv") == EXIT_IO


class TestEval:
    def test_self_evaluation(self, tmp_path, scene, capsys):
        from afftrack.data import write_mot_csv

        # a hypothesis file carries no ignore flags, so drop flagged gt rows
        hyp = tmp_path / "hyp.csv"
        write_mot_csv(hyp, [d for d in parse_mot_csv(scene / "gt.csv") if d.conf != 0])
        out = tmp_path / "results.txt"
        events = tmp_path / "events.csv"
        code = run("eval", "--gt", scene / "gt.csv", "--hyp", hyp,
                   "--out", out, "--events", events)
        assert code == EXIT_OK
        text = out.read_text()
        assert "MOTA = 100.0000" in text and "IDF1 = 100.0000" in text
        assert events.read_text().startswith("frame,event,gt_id,hyp_id,iou")
        assert out.with_suffix(".png").exists()
        assert "MOTA" in capsys.readouterr().out

    def test_empty_ground_truth_is_usage_error(self, tmp_path, scene):
        empty = tmp_path / "gt.csv"
        empty.write_text("")
        out = tmp_path / "results.txt"
        code = run("eval", "--gt", empty, "--hyp", scene / "gt.csv", "--out", out)
        assert code == EXIT_USAGE
        assert not out.exists()  # nothing half-written

    def test_missing_file_is_io_error(self, tmp_path, scene):
        assert run("eval", "--gt", tmp_path / "nope.csv", "--hyp", scene / "gt.csv") == EXIT_IO


class TestGradcheck:
    def test_passes_on_fresh_model(self):
        assert run("gradcheck", "--seed", "1", "--trials", "2") == EXIT_OK

    def test_corrupted_gradient_detected(self):
        assert run("gradcheck", "--seed", "1", "--trials", "1", "--corrupt") == EXIT_CHECK_FAILED

    def test_report_lists_layers(self, capsys):
        run("gradcheck", "--seed", "2", "--trials", "1")
        out = capsys.readouterr().out
        assert "backbone.0.weight" in out and "compression.0.weight" in out
        assert "max relative error" in out


class TestUsage:
    def test_missing_required_argument_exits_two(self):
        with pytest.raises(SystemExit) as info:
            main(["synth"])
        assert info.value.code == EXIT_USAGE

    def test_unknown_command_exits_two(self):
        with pytest.raises(SystemExit) as info:
            main(["transmogrify"])
        assert info.value.code == EXIT_USAGE
