import contextlib
import csv
import io
import json
import re
import shutil
import stat
from pathlib import Path

import pytest

from conftest import make_session
from verilabel.cli import main
from verilabel.domain import load_default_codebook
from verilabel.goldsmith import RATER_1, load_packet, record_adjudication, save_packet
from verilabel.metrics import LabelSeries, load_label_series, save_label_series

CATEGORIES = load_default_codebook().names


def invoke(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


def write_corpus(path: Path, n_sessions: int = 12) -> list:
    transcripts = [
        make_session(f"s{i+1:02d}", "TSTSTSTSTS") for i in range(n_sessions)
    ]
    with path.open("w", encoding="utf-8") as fh:
        for t in transcripts:
            for i in range(len(t)):
                u = t[i]
                fh.write(
                    json.dumps(
                        {
                            "session_id": u.session_id,
                            "turn_index": u.turn_index,
                            "speaker": u.speaker.value,
                            "text": u.text,
                        }
                    )
                    + "\n"
                )
    return transcripts


def write_gold(path: Path, transcripts) -> LabelSeries:
    refs = sorted(
        (t.session_id, i) for t in transcripts for i in t.tutor_indices()
    )
    series = LabelSeries.from_items(
        [(ref, CATEGORIES[n % len(CATEGORIES)]) for n, ref in enumerate(refs)]
    )
    save_label_series(series, path)
    return series


def write_backends_yaml(path: Path, gold_path: Path) -> None:
    path.write_text(
        f"""
backends:
  - id: ann_a
    kind: synthetic
    seed: 7
    gold_path: {gold_path}
    confusion: {{scheme: uniform_error, accuracy: 0.5}}
  - id: ann_b
    kind: synthetic
    seed: 104
    gold_path: {gold_path}
    confusion: {{scheme: uniform_error, accuracy: 0.5}}
  - id: ver
    kind: synthetic
    seed: 9
    gold_path: {gold_path}
    verifier: {{correction_prob: 0.5, corruption_prob: 0.0}}
""",
        encoding="utf-8",
    )


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """One full CLI pipeline: three runs, diff, blinded adjudication,
    gold derivation. Tests assert on the recorded outcomes."""
    root = tmp_path_factory.mktemp("cli-ws")
    corpus = root / "corpus.jsonl"
    transcripts = write_corpus(corpus)
    gold_true = root / "gold_true.csv"
    write_gold(gold_true, transcripts)
    backends = root / "backends.yaml"
    write_backends_yaml(backends, gold_true)

    steps: dict[str, tuple] = {}

    def run_cmd(name, spec, out, run_id):
        steps[name] = invoke(
            [
                "run", "--corpus", str(corpus), "--spec", spec,
                "--backends", str(backends), "--out", str(out),
                "--run-id", run_id,
            ]
        )

    run_a = root / "runs" / "a"
    run_b = root / "runs" / "b"
    run_base = root / "runs" / "base"
    run_cmd("run_a", "ver(ann_a)", run_a, "runA")
    run_cmd("run_b", "ver(ann_b)", run_b, "runB")
    run_cmd("run_base", "ann_a", run_base, "runBase")

    adj = root / "adj"
    steps["prepare"] = invoke(
        [
            "adjudicate", "prepare", "--run-a", str(run_a), "--run-b", str(run_b),
            "--corpus", str(corpus), "--seed", "17", "--out-dir", str(adj),
        ]
    )

    packet_path = adj / "packet.json"
    pending_copy = root / "packet_pending.json"
    shutil.copy(packet_path, pending_copy)
    packet = load_packet(packet_path)
    for item in packet.items:
        packet = record_adjudication(packet, item.item_id, RATER_1)
    save_packet(packet, packet_path)

    gold_out = root / "gold_out.csv"
    steps["derive"] = invoke(
        [
            "gold", "derive", "--packet", str(packet_path),
            "--sealed", str(adj / "sealed_map.json"),
            "--agreements", str(adj / "agreements.csv"),
            "--out", str(gold_out),
        ]
    )

    return {
        "root": root,
        "corpus": corpus,
        "gold_true": gold_true,
        "backends": backends,
        "run_a": run_a,
        "run_b": run_b,
        "run_base": run_base,
        "adj": adj,
        "packet_pending": pending_copy,
        "gold_out": gold_out,
        "steps": steps,
    }


class TestIngest:
    def test_reports_shape_and_digest(self, ws):
        code, out, _ = invoke(["ingest", str(ws["corpus"])])
        assert code == 0
        assert "sessions: 12" in out
        assert "utterances: 120" in out
        assert "tutor turns: 60" in out
        assert re.search(r"corpus digest: [0-9a-f]{64}", out)

    def test_missing_file_exits_1(self, tmp_path):
        code, _, err = invoke(["ingest", str(tmp_path / "nope.jsonl")])
        assert code == 1
        assert "error:" in err

    def test_malformed_line_exits_1(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(
            '{"session_id": "s1", "turn_index": 0, "speaker": "TUTOR", "text": "hi"}\n'
            "not json\n",
            encoding="utf-8",
        )
        code, _, err = invoke(["ingest", str(bad)])
        assert code == 1
        assert "bad.jsonl:2" in err


class TestRun:
    def test_runs_complete(self, ws):
        for name in ("run_a", "run_b", "run_base"):
            code, out, err = ws["steps"][name]
            assert code == 0, err
            assert "complete" in out
        for d in (ws["run_a"], ws["run_b"], ws["run_base"]):
            for artifact in ("manifest.json", "labels.csv", "audit.jsonl", "result.json"):
                assert (d / artifact).is_file()

    def test_count_line(self, ws):
        _, out, _ = ws["steps"]["run_a"]
        m = re.search(r"annotated (\d+), verified (\d+)", out)
        assert m
        assert int(m.group(1)) == 60

    def test_refuses_to_overwrite(self, ws):
        code, _, err = invoke(
            [
                "run", "--corpus", str(ws["corpus"]), "--spec", "ver(ann_a)",
                "--backends", str(ws["backends"]), "--out", str(ws["run_a"]),
                "--run-id", "runA2",
            ]
        )
        assert code == 1
        assert "nothing is overwritten" in err

    def test_bad_spec_exits_1(self, ws, tmp_path):
        code, _, err = invoke(
            [
                "run", "--corpus", str(ws["corpus"]), "--spec", "x(y(z))",
                "--backends", str(ws["backends"]), "--out", str(tmp_path / "r"),
            ]
        )
        assert code == 1
        assert "verifier(annotator)" in err

    def test_spec_naming_absent_backend_exits_1(self, ws, tmp_path):
        code, _, err = invoke(
            [
                "run", "--corpus", str(ws["corpus"]), "--spec", "ver(ghost)",
                "--backends", str(ws["backends"]), "--out", str(tmp_path / "r"),
            ]
        )
        assert code == 1
        assert "ghost" in err

    def test_missing_required_options_exit_1(self, ws):
        code, _, err = invoke(["run", "--corpus", str(ws["corpus"])])
        assert code == 1

    def test_unknown_command_exits_1(self):
        code, _, _ = invoke(["frobnicate"])
        assert code == 1

    def test_gold_eligible_forbids_synthetic(self, ws, tmp_path):
        code, _, err = invoke(
            [
                "run", "--corpus", str(ws["corpus"]), "--spec", "ver(ann_a)",
                "--backends", str(ws["backends"]), "--out", str(tmp_path / "r"),
                "--gold-eligible",
            ]
        )
        assert code == 1
        assert "gold" in err


class TestDiff:
    def test_rate_line_and_csv(self, ws, tmp_path):
        out_csv = tmp_path / "diff.csv"
        code, out, _ = invoke(
            ["diff", str(ws["run_a"]), str(ws["run_b"]), "--out", str(out_csv)]
        )
        assert code == 0
        m = re.search(r"(\d+) disagreements over 60 tutor turns \((\d+\.\d{2})%\)", out)
        assert m
        n = int(m.group(1))
        assert 0 < n < 60
        with out_csv.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == n
        assert set(rows[0]) == {"session_id", "turn_index", "label_a", "label_b"}
        for row in rows:
            assert row["label_a"] != row["label_b"]

    def test_identical_runs_diff_empty(self, ws):
        code, out, _ = invoke(["diff", str(ws["run_a"]), str(ws["run_a"])])
        assert code == 0
        assert out.startswith("0 disagreements")


class TestAdjudicatePrepare:
    def test_artifacts_written(self, ws):
        code, out, err = ws["steps"]["prepare"]
        assert code == 0, err
        for name in ("packet.json", "sealed_map.json", "agreements.csv"):
            assert (ws["adj"] / name).is_file()
        m = re.search(r"(\d+) disagreements over (\d+) labeled turns", out)
        assert m and int(m.group(2)) == 60

    def test_partition_conserved(self, ws):
        packet = load_packet(ws["adj"] / "packet.json")
        agreements = load_label_series(ws["adj"] / "agreements.csv")
        assert len(packet.items) + len(agreements) == 60

    def test_packet_leaks_no_run_ids(self, ws):
        text = (ws["adj"] / "packet.json").read_text(encoding="utf-8")
        assert "runA" not in text and "runB" not in text

    def test_sealed_map_permissions_and_sources(self, ws):
        path = ws["adj"] / "sealed_map.json"
        assert stat.S_IMODE(path.stat().st_mode) == 0o600
        doc = json.loads(path.read_text(encoding="utf-8"))
        assert {doc["source_a"], doc["source_b"]} == {"runA", "runB"}

    def test_corpus_mismatch_exits_1(self, ws, tmp_path):
        other = tmp_path / "other.jsonl"
        write_corpus(other, n_sessions=2)
        code, _, err = invoke(
            [
                "adjudicate", "prepare", "--run-a", str(ws["run_a"]),
                "--run-b", str(ws["run_b"]), "--corpus", str(other),
                "--seed", "1", "--out-dir", str(tmp_path / "adj"),
            ]
        )
        assert code == 1
        assert "digest" in err


class TestGoldDerive:
    def test_pending_packet_exits_1(self, ws, tmp_path):
        code, _, err = invoke(
            [
                "gold", "derive", "--packet", str(ws["packet_pending"]),
                "--sealed", str(ws["adj"] / "sealed_map.json"),
                "--agreements", str(ws["adj"] / "agreements.csv"),
                "--out", str(tmp_path / "g.csv"),
            ]
        )
        assert code == 1
        assert "pending" in err

    def test_derive_succeeds(self, ws):
        code, out, err = ws["steps"]["derive"]
        assert code == 0, err
        assert re.search(r"gold labels: 60 \(\d+ agreements \+ \d+ adjudicated\)", out)
        assert "reviewer aligned with runA" in out
        assert "of disagreements" in out

    def test_gold_file_round_trips(self, ws):
        series = load_label_series(ws["gold_out"])
        assert len(series) == 60
        with ws["gold_out"].open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert set(rows[0]) == {"session_id", "turn_index", "label", "provenance"}
        assert {r["provenance"] for r in rows} <= {"AGREEMENT", "ADJUDICATED"}


class TestEvaluateAndReport:
    def test_evaluate_writes_tables(self, ws, tmp_path):
        out_dir = tmp_path / "eval"
        code, out, err = invoke(
            [
                "evaluate", str(ws["run_a"]), "--gold", str(ws["gold_out"]),
                "--baseline", str(ws["run_base"]), "--out-dir", str(out_dir),
            ]
        )
        assert code == 0, err
        for name in ("report.tsv", "confusion.tsv", "summary.json"):
            assert (out_dir / name).is_file()
        assert not (out_dir / "figures").exists()
        assert re.search(r"report digest: [0-9a-f]{64}", out)
        header = (out_dir / "report.tsv").read_text().splitlines()[0]
        assert header.split("\t")[:4] == [
            "category", "kappa_baseline", "kappa_verified", "delta_kappa",
        ]

    def test_report_renders_figures(self, ws, tmp_path):
        out_dir = tmp_path / "report"
        code, _, err = invoke(
            [
                "report", str(ws["run_a"]), "--gold", str(ws["gold_out"]),
                "--baseline", str(ws["run_base"]), "--out-dir", str(out_dir),
            ]
        )
        assert code == 0, err
        figures = out_dir / "figures"
        for name in ("kappa_by_category.png", "delta_kappa.png", "confusion_matrix.png"):
            path = figures / name
            assert path.is_file() and path.stat().st_size > 0
        assert (out_dir / "summary.json").is_file()

    def test_report_digest_is_deterministic(self, ws, tmp_path):
        digests = []
        summaries = []
        for sub in ("e1", "e2"):
            out_dir = tmp_path / sub
            code, out, _ = invoke(
                [
                    "evaluate", str(ws["run_a"]), "--gold", str(ws["gold_out"]),
                    "--out-dir", str(out_dir),
                ]
            )
            assert code == 0
            digests.append(re.search(r"report digest: ([0-9a-f]{64})", out).group(1))
            summaries.append((out_dir / "summary.json").read_bytes())
        assert digests[0] == digests[1]
        assert summaries[0] == summaries[1]

    def test_gold_ref_mismatch_exits_1(self, ws, tmp_path):
        code, _, err = invoke(
            [
                "evaluate", str(ws["run_a"]),
                "--gold", str(ws["adj"] / "agreements.csv"),
                "--out-dir", str(tmp_path / "eval"),
            ]
        )
        assert code == 1
        assert "error:" in err


class TestSuspensionAndResume:
    def test_outage_exits_2_then_resume_completes(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VERILABEL_TEST_KEY", "k-123")
        corpus = tmp_path / "corpus.jsonl"
        transcripts = write_corpus(corpus, n_sessions=3)
        gold = tmp_path / "gold.csv"
        write_gold(gold, transcripts)

        broken = tmp_path / "broken.yaml"
        broken.write_text(
            f"""
backends:
  - id: ann
    kind: remote
    base_url: http://127.0.0.1:9/v1
    model: test-model
    api_key_env: VERILABEL_TEST_KEY
    max_attempts: 1
  - id: ver
    kind: synthetic
    seed: 3
    gold_path: {gold}
    verifier: {{correction_prob: 1.0}}
""",
            encoding="utf-8",
        )
        out_dir = tmp_path / "run"
        code, _, err = invoke(
            [
                "run", "--corpus", str(corpus), "--spec", "ver(ann)",
                "--backends", str(broken), "--out", str(out_dir),
                "--run-id", "suspended-run",
            ]
        )
        assert code == 2
        assert "hint: resume" in err
        assert str(out_dir) in err

        fixed = tmp_path / "fixed.yaml"
        fixed.write_text(
            f"""
backends:
  - id: ann
    kind: synthetic
    seed: 5
    gold_path: {gold}
    confusion: {{scheme: identity}}
  - id: ver
    kind: synthetic
    seed: 3
    gold_path: {gold}
    verifier: {{correction_prob: 1.0}}
""",
            encoding="utf-8",
        )
        code, out, err = invoke(
            [
                "run", "--resume", str(out_dir), "--corpus", str(corpus),
                "--backends", str(fixed),
            ]
        )
        assert code == 0, err
        assert "suspended-run complete" in out
        final = load_label_series(out_dir / "labels.csv")
        assert len(final) == 15

    def test_resume_with_edited_corpus_exits_1(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VERILABEL_TEST_KEY", "k-123")
        corpus = tmp_path / "corpus.jsonl"
        transcripts = write_corpus(corpus, n_sessions=2)
        gold = tmp_path / "gold.csv"
        write_gold(gold, transcripts)
        broken = tmp_path / "broken.yaml"
        broken.write_text(
            f"""
backends:
  - id: ann
    kind: remote
    base_url: http://127.0.0.1:9/v1
    model: test-model
    api_key_env: VERILABEL_TEST_KEY
    max_attempts: 1
  - id: ver
    kind: synthetic
    seed: 3
    gold_path: {gold}
    verifier: {{correction_prob: 1.0}}
""",
            encoding="utf-8",
        )
        out_dir = tmp_path / "run"
        code, _, _ = invoke(
            [
                "run", "--corpus", str(corpus), "--spec", "ver(ann)",
                "--backends", str(broken), "--out", str(out_dir),
            ]
        )
        assert code == 2
        write_corpus(corpus, n_sessions=3)
        code, _, err = invoke(
            ["run", "--resume", str(out_dir), "--corpus", str(corpus), "--backends", str(broken)]
        )
        assert code == 1
        assert "digest" in err
