import json
import math

import numpy as np
import pytest

from ctalign.cli import main
from ctalign.embeddings import EmbeddingMatrix, read_embeddings, write_embeddings


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def data_rows(text):
    return [line for line in text.strip().splitlines() if not line.startswith("#")]


@pytest.fixture
def emb_pair(tmp_path):
    q = tmp_path / "q.emb"
    g = tmp_path / "g.emb"
    write_embeddings(EmbeddingMatrix([[1.0, 0.0]]), q)
    write_embeddings(EmbeddingMatrix([[0.0, 1.0], [0.9, 0.1]]), g)
    return str(q), str(g)


@pytest.fixture
def small_corpus(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(
        '{"id": "a", "text": "Solid nodule in the right upper lung."}\n'
        '{"id": "b", "text": "Both lungs show no obvious abnormality."}\n',
        encoding="utf-8",
    )
    return str(path)


class TestDispatch:
    def test_unknown_subcommand_exits_1_with_suggestion(self, capsys):
        code, _, err = run(capsys, "retreive")
        assert code == 1
        assert "retrieve" in err

    def test_no_subcommand_exits_1(self, capsys):
        code, _, err = run(capsys)
        assert code == 1

    def test_missing_required_flag_exits_1(self, capsys):
        code, _, err = run(capsys, "retrieve")
        assert code == 1

    def test_missing_file_exits_2(self, capsys):
        code, _, err = run(capsys, "emb-info", "/nonexistent/file.emb")
        assert code == 2
        assert "data error" in err


class TestRetrieve:
    def test_basic(self, capsys, emb_pair):
        q, g = emb_pair
        code, out, _ = run(capsys, "retrieve", "--queries", q, "--gallery", g)
        assert code == 0
        rows = data_rows(out)
        assert rows[0] == "query_index\tmatched_index\tscore"
        cells = rows[1].split("\t")
        assert cells[0] == "0" and cells[1] == "1"
        # stored as float32, so compare at the documented tolerance
        assert float(cells[2]) == pytest.approx(0.9 / math.hypot(0.9, 0.1), abs=1e-5)

    def test_dim_mismatch_exits_2(self, capsys, tmp_path, emb_pair):
        q, _ = emb_pair
        bad = tmp_path / "bad.emb"
        write_embeddings(EmbeddingMatrix([[1.0, 2.0, 3.0]]), bad)
        code, _, err = run(capsys, "retrieve", "--queries", q, "--gallery", str(bad))
        assert code == 2
        assert "dim" in err

    def test_byte_identical_reruns(self, capsys, emb_pair):
        q, g = emb_pair
        _, out1, _ = run(capsys, "retrieve", "--queries", q, "--gallery", g, "-k", "2")
        _, out2, _ = run(capsys, "retrieve", "--queries", q, "--gallery", g, "-k", "2")
        assert out1 == out2

    def test_topk_sidecar(self, capsys, tmp_path, emb_pair):
        q, g = emb_pair
        topk = tmp_path / "topk.tsv"
        code, _, _ = run(
            capsys, "retrieve", "--queries", q, "--gallery", g, "-k", "2", "--topk-out", str(topk)
        )
        assert code == 0
        lines = topk.read_text().strip().splitlines()
        assert lines[0] == "query_index\trank\tgallery_index\tscore"
        assert len(lines) == 3


class TestLossCommands:
    def test_roco_identity_fixture(self, capsys, tmp_path):
        emb = tmp_path / "i.emb"
        write_embeddings(EmbeddingMatrix([[1.0, 0.0], [1.0, 0.0]]), emb)
        code, out, _ = run(capsys, "roco", "--img", str(emb), "--txt", str(emb), "-t", "1.0")
        assert code == 0
        loss = float(data_rows(out)[0].split("\t")[1])
        assert loss == pytest.approx(0.693147, abs=1e-6)

    def test_roco_with_positives_file(self, capsys, tmp_path):
        emb = tmp_path / "i.emb"
        write_embeddings(EmbeddingMatrix([[1.0, 0.0], [1.0, 0.0]]), emb)
        positives = tmp_path / "p.json"
        positives.write_text("[[0, 1], [0, 1]]")
        code, out, _ = run(
            capsys, "roco", "--img", str(emb), "--txt", str(emb),
            "--positives", str(positives), "-t", "1.0",
        )
        assert code == 0
        assert float(data_rows(out)[0].split("\t")[1]) == pytest.approx(0.693147, abs=1e-6)

    def test_distill_fixture(self, capsys, tmp_path):
        s = tmp_path / "s.emb"
        t = tmp_path / "t.emb"
        write_embeddings(EmbeddingMatrix([[1.0, 0.0], [0.0, 1.0]]), s)
        write_embeddings(EmbeddingMatrix([[1.0, 0.0], [1.0, 0.0]]), t)
        code, out, _ = run(capsys, "distill", "--student", str(s), "--teacher", str(t))
        assert code == 0
        assert float(data_rows(out)[0].split("\t")[1]) == pytest.approx(4.0, abs=1e-9)

    def test_gradient_dump(self, capsys, tmp_path):
        s = tmp_path / "s.emb"
        t = tmp_path / "t.emb"
        write_embeddings(EmbeddingMatrix([[1.0, 0.0], [0.0, 1.0]]), s)
        write_embeddings(EmbeddingMatrix([[1.0, 0.0], [1.0, 0.0]]), t)
        prefix = str(tmp_path / "grads")
        code, _, _ = run(
            capsys, "distill", "--student", str(s), "--teacher", str(t), "--grad-out", prefix
        )
        assert code == 0
        student_grad = read_embeddings(prefix + ".student.emb")
        assert student_grad.rows == 2 and student_grad.dim == 2


class TestZeroshot:
    def test_probability_fixture(self, capsys, tmp_path):
        img = tmp_path / "img.emb"
        pos = tmp_path / "pos.emb"
        neg = tmp_path / "neg.emb"
        write_embeddings(EmbeddingMatrix([[1.0, 0.0]]), img)
        write_embeddings(EmbeddingMatrix([[1.0, 0.0]]), pos)
        write_embeddings(EmbeddingMatrix([[0.0, 1.0]]), neg)
        code, out, _ = run(
            capsys, "zeroshot", "--image", str(img), "--pos", str(pos), "--neg", str(neg),
            "--entity", "nodule",
        )
        assert code == 0
        assert "# positive_prompt=this is a chest CT with nodule in lung" in out
        cells = data_rows(out)[1].split("\t")
        assert float(cells[1]) == pytest.approx(0.731059, abs=1e-5)
        assert cells[2] == "1"


class TestCorpusCommands:
    def test_label(self, capsys, small_corpus):
        code, out, _ = run(capsys, "label", "--corpus", small_corpus)
        assert code == 0
        rows = data_rows(out)
        assert rows[0].split("\t")[0] == "id"
        assert rows[1] == "a\t1\t0\t0\t0\t0\t0"
        assert rows[2] == "b\t0\t0\t0\t0\t0\t0"

    def test_healthy(self, capsys, small_corpus):
        code, out, _ = run(capsys, "healthy", "--corpus", small_corpus)
        assert code == 0
        rows = data_rows(out)
        assert rows[1] == "a\t0"
        assert rows[2] == "b\t1"

    def test_mask_with_sidecar(self, capsys, tmp_path, small_corpus):
        out_path = tmp_path / "masked.tsv"
        code, _, _ = run(
            capsys, "mask", "--corpus", small_corpus, "--seed", "1",
            "--entity-rate", "1.0", "--random-rate", "0.0", "--out", str(out_path),
        )
        assert code == 0
        lines = [l for l in out_path.read_text().splitlines() if not l.startswith("#")]
        assert lines[0].startswith("a\t[MASK] [MASK]")
        plan_lines = (tmp_path / "masked.tsv.plan.jsonl").read_text().strip().splitlines()
        plans = [json.loads(l) for l in plan_lines]
        assert plans[0]["id"] == "a"
        assert plans[0]["strategy_tags"] == ["entity_phrase"]

    def test_mask_deterministic(self, capsys, small_corpus):
        _, out1, _ = run(capsys, "mask", "--corpus", small_corpus, "--seed", "5")
        _, out2, _ = run(capsys, "mask", "--corpus", small_corpus, "--seed", "5")
        assert out1 == out2


class TestEvalCommands:
    def test_eval_report_perfect(self, capsys, small_corpus, tmp_path):
        fig = tmp_path / "prf.png"
        code, out, _ = run(
            capsys, "eval-report", "--generated", small_corpus, "--reference", small_corpus,
            "--fig", str(fig),
        )
        assert code == 0
        rows = data_rows(out)
        nodule = rows[1].split("\t")
        assert nodule[0] == "nodule"
        assert nodule[5] == f"{1.0:.9f}"
        assert fig.exists() and fig.stat().st_size > 0

    def test_eval_report_to_file_prints_pretty(self, capsys, small_corpus, tmp_path):
        out_path = tmp_path / "prf.tsv"
        code, out, _ = run(
            capsys, "eval-report", "--generated", small_corpus, "--reference", small_corpus,
            "--out", str(out_path),
        )
        assert code == 0
        assert "precision" in out  # human-readable table on stdout
        assert out_path.read_text().startswith("# ctalign eval-report")

    def test_eval_nlp_identical(self, capsys, small_corpus, tmp_path):
        per = tmp_path / "per.tsv"
        fig = tmp_path / "nlp.png"
        code, out, _ = run(
            capsys, "eval-nlp", "--generated", small_corpus, "--reference", small_corpus,
            "--per-report", str(per), "--fig", str(fig),
        )
        assert code == 0
        rows = {r.split("\t")[0]: r.split("\t")[1] for r in data_rows(out)[1:]}
        assert float(rows["bleu4"]) == pytest.approx(1.0)
        assert float(rows["rouge_l"]) == pytest.approx(1.0)
        assert "CIDEr-D" in out
        assert per.exists() and fig.exists()

    def test_eval_nlp_id_mismatch_exits_2(self, capsys, small_corpus, tmp_path):
        other = tmp_path / "other.jsonl"
        other.write_text('{"id": "zzz", "text": "hello"}\n')
        code, _, err = run(
            capsys, "eval-nlp", "--generated", str(other), "--reference", small_corpus
        )
        assert code == 2


class TestTrainToy:
    def test_writes_outputs(self, capsys, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(
            json.dumps(
                {
                    "dataset": {"k": 3, "n": 24, "p": 6, "q": 6, "noise": 0.3, "seed": 0},
                    "train": {"epochs": 10, "embed_dim": 6},
                    "ablation": {
                        "enabled": True,
                        "seeds": [0],
                        "n": 30,
                        "healthy_count": 15,
                        "p": 6,
                        "q": 6,
                        "train": {
                            "epochs": 10,
                            "learning_rate": 0.5,
                            "batch_size": 8,
                            "lambda_dist": 0.0,
                            "use_distill": False,
                            "embed_dim": 6,
                        },
                    },
                }
            )
        )
        out_dir = tmp_path / "run"
        code, out, err = run(
            capsys, "train-toy", "--config", str(config), "--out", str(out_dir)
        )
        assert code == 0, err
        for name in (
            "config.json",
            "loss.tsv",
            "loss.png",
            "summary.tsv",
            "image_embeddings.emb",
            "text_embeddings.emb",
            "ablation.tsv",
            "ablation.png",
        ):
            assert (out_dir / name).exists(), name
        emb = read_embeddings(out_dir / "image_embeddings.emb")
        assert emb.rows == 24 and emb.dim == 6
        resolved = json.loads((out_dir / "config.json").read_text())
        assert resolved["train"]["temperature"] == 0.07  # defaults echoed

    def test_divergent_config_exits_2(self, capsys, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(
            json.dumps(
                {
                    "dataset": {"k": 3, "n": 24, "p": 6, "q": 6, "noise": 0.3, "seed": 0},
                    "train": {"epochs": 60, "learning_rate": 1e6, "embed_dim": 6},
                    "ablation": {"enabled": False},
                }
            )
        )
        code, _, err = run(capsys, "train-toy", "--config", str(config), "--out", str(tmp_path / "x"))
        assert code == 2
        assert "diverged" in err


class TestSmallCommands:
    def test_gradcheck(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--loss", "distill", "--rows", "4", "--dim", "5")
        assert code == 0
        err = float(data_rows(out)[0].split("\t")[1])
        assert err < 1e-4

    def test_hu_normalize(self, capsys):
        code, out, _ = run(capsys, "hu-normalize", "--", "-1150", "-400", "350", "10000")
        assert code == 0
        rows = [r.split("\t") for r in data_rows(out)[1:]]
        assert [r[1] for r in rows] == [
            f"{-1.0:.9f}",
            f"{0.0:.9f}",
            f"{1.0:.9f}",
            f"{1.0:.9f}",
        ]

    def test_emb_info(self, capsys, tmp_path):
        path = tmp_path / "m.emb"
        write_embeddings(EmbeddingMatrix(np.ones((3, 4))), path)
        code, out, _ = run(capsys, "emb-info", str(path))
        assert code == 0
        rows = dict(r.split("\t") for r in data_rows(out))
        assert rows == {"rows": "3", "dim": "4", "normalized": "0"}

    def test_emb_info_bad_magic_exits_2(self, capsys, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        code, _, err = run(capsys, "emb-info", str(path))
        assert code == 2
        assert "magic" in err
