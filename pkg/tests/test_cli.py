import json

import pytest

from chordflow.cli import main


@pytest.fixture(scope="module")
def corpus_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw"
    clean = root / "clean"
    assert main(["make-toy-corpus", "--out", str(raw), "--pieces", "8", "--seed", "5"]) == 0
    assert (
        main(
            [
                "prepare-data",
                "--in", str(raw),
                "--out", str(clean),
                "--reject-log", str(root / "rejects.jsonl"),
            ]
        )
        == 0
    )
    return root, raw, clean


class TestDataCommands:
    def test_prepare_outputs(self, corpus_dirs):
        root, raw, clean = corpus_dirs
        assert (clean / "pieces.jsonl").exists()
        rejects = [
            json.loads(l) for l in (root / "rejects.jsonl").read_text().splitlines()
        ]
        assert {r["reason"] for r in rejects} == {"time_signature", "short_chord"}

    def test_evaluate_json(self, corpus_dirs, capsys):
        root, raw, clean = corpus_dirs
        assert main(["evaluate", "--score", str(clean / "pieces.jsonl")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out["metrics"]) == {
            "cpi", "cioi", "ctnctr", "pcs", "mctd", "che", "cs", "hs", "wmch",
        }

    def test_evaluate_against_csv(self, corpus_dirs, capsys):
        root, raw, clean = corpus_dirs
        assert (
            main(
                [
                    "evaluate",
                    "--score", str(clean / "pieces.jsonl"),
                    "--against", str(clean / "pieces.jsonl"),
                    "--report", "csv",
                ]
            )
            == 0
        )
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "metric,value,reference,difference"
        for line in lines[1:]:
            parts = line.split(",")
            assert float(parts[3]) == pytest.approx(0.0, abs=1e-9)

    def test_dump_features(self, corpus_dirs, tmp_path):
        root, raw, clean = corpus_dirs
        out = tmp_path / "features"
        assert main(["dump-features", "--score", str(clean / "pieces.jsonl"),
                     "--out", str(out)]) == 0
        files = list(out.glob("*.features.jsonl"))
        assert files
        record = json.loads(files[0].read_text().splitlines()[0])
        assert set(record) == {"beat", "weighted_notes", "factor", "terminal", "structural"}


class TestTrainAndStream:
    def test_train_predictor_and_run_stream(self, corpus_dirs, tmp_path, capsys):
        root, raw, clean = corpus_dirs
        ckpt = tmp_path / "predictor.bin"
        assert (
            main(
                [
                    "train-predictor",
                    "--corpus", str(clean / "pieces.jsonl"),
                    "--out", str(ckpt),
                    "--max-iter", "10",
                    "--freq", "1",
                ]
            )
            == 0
        )
        assert ckpt.exists()
        capsys.readouterr()

        melody_log = tmp_path / "melody.ndjson"
        with open(melody_log, "w") as fh:
            for step in range(64):
                fh.write(json.dumps({"type": "melody_in", "step": step,
                                     "pitch": 60 + (step // 4) % 5}) + "\n")
        out_log = tmp_path / "events.ndjson"
        midi_path = tmp_path / "stream.mid"
        assert (
            main(
                [
                    "run-stream",
                    "--input", str(melody_log),
                    "--clock", "sim",
                    "--bpm", "80",
                    "--predictor", str(ckpt),
                    "--emit-midi", str(midi_path),
                    "--out", str(out_log),
                ]
            )
            == 0
        )
        events = [json.loads(l) for l in out_log.read_text().splitlines()]
        kinds = [e["kind"] for e in events]
        assert kinds.count("accomp_out") >= 16
        assert midi_path.exists()
        from chordflow.midi import read_midi

        data = read_midi(midi_path)
        assert len(data.tracks) >= 3

    def test_run_stream_from_score_jsonl(self, corpus_dirs, tmp_path, capsys):
        root, raw, clean = corpus_dirs
        out_log = tmp_path / "events2.ndjson"
        assert (
            main(
                [
                    "run-stream",
                    "--input", str(clean / "pieces.jsonl"),
                    "--out", str(out_log),
                ]
            )
            == 0
        )
        events = [json.loads(l) for l in out_log.read_text().splitlines()]
        assert events[-1]["kind"] == "latency_report"
