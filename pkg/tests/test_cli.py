import subprocess
import sys

import pytest

from coopdct import synthetic
from coopdct.cli import run
from coopdct.constraints import read_profiles
from coopdct.trainer import read_config, read_metrics

TINY = ["--embed_dim", "8", "--hidden_dim", "8", "--critic_hidden", "6", "--classifier_hidden", "6",
        "--batch_size", "8", "--n_dis", "1"]


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    src, tgt = synthetic.generate_corpora(synthetic.SyntheticSpec(40), seed=0)
    (root / "s.txt").write_text("\n".join(src) + "\n")
    (root / "t.txt").write_text("\n".join(tgt) + "\n")
    (root / "adj.txt").write_text(" ".join(synthetic.SOURCE_MARKERS + synthetic.TARGET_MARKERS))
    (root / "c.cfg").write_text("iterations = 3\ncheckpoint_every = 2\nseed = 1\n")
    return root


@pytest.fixture(scope="module")
def trained(files):
    out = files / "run"
    code = run(["train", "--config", str(files / "c.cfg"), "--src", str(files / "s.txt"), "--tgt",
                str(files / "t.txt"), "--out", str(out), *TINY])
    assert code == 0
    return out


def test_train_outputs(trained):
    names = sorted(p.name for p in trained.iterdir())
    assert {"metrics.log", "config.cfg", "vocab.txt", "ckpt_0000002.pt", "final.pt"} <= set(names)
    assert [m["iter"] for m in read_metrics(trained / "metrics.log")] == [1, 2, 3]
    cfg = read_config(trained / "config.cfg")
    assert (cfg.iterations, cfg.seed, cfg.hidden_dim, cfg.n_dis) == (3, 1, 8, 1)


def test_train_unknown_key(files, tmp_path, capsys):
    code = run(["train", "--src", str(files / "s.txt"), "--tgt", str(files / "t.txt"), "--out", str(tmp_path),
                "--no_such_knob", "3"])
    assert code == 1
    assert "no_such_knob" in capsys.readouterr().err


def test_train_unknown_key_in_file(files, tmp_path):
    (tmp_path / "bad.cfg").write_text("lr_ae = 0.1\nwibble = 2\n")
    code = run(["train", "--config", str(tmp_path / "bad.cfg"), "--src", str(files / "s.txt"),
                "--tgt", str(files / "t.txt"), "--out", str(tmp_path / "o")])
    assert code == 1


def test_train_runtime_failure_names_module(files, tmp_path, capsys):
    code = run(["train", "--src", str(files / "missing.txt"), "--tgt", str(files / "t.txt"),
                "--out", str(tmp_path), *TINY])
    assert code == 2
    assert "corpus" in capsys.readouterr().err


def test_transfer(files, trained):
    inp = files / "x.txt"
    inp.write_text("the chef tried the soup and it was great\n\nwe made the pie and it was superb\n")
    out = files / "x.out"
    code = run(["transfer", "--ckpt", str(trained / "final.pt"), "--input", str(inp), "--output", str(out),
                "--direction", "src2tgt", "--strategy", "nucleus", "--p", "0.6", "--tsv"])
    assert code == 0
    lines = out.read_text().split("\n")
    assert len(lines) == 4 and lines[1] == "" and lines[3] == ""
    assert (files / "x.out.tsv").exists()
    assert "strategy = nucleus" in (files / "transfer.cfg").read_text()


def test_transfer_missing_ckpt(files, capsys):
    assert run(["transfer", "--input", str(files / "s.txt")]) == 1
    assert "usage:" in capsys.readouterr().err


def test_annotate_and_mine(files):
    markers = files / "markers.txt"
    assert run(["mine-attrs", "--src", str(files / "s.txt"), "--tgt", str(files / "t.txt"), "--out",
                str(markers), "--gamma", "2"]) == 0
    assert "[src]" in markers.read_text()
    out = files / "prof"
    assert run(["annotate", "--src", str(files / "s.txt"), "--tgt", str(files / "t.txt"), "--out", str(out),
                "--markers", str(markers), "--adjectives", str(files / "adj.txt")]) == 0
    profiles = read_profiles(out / "src_profiles.tsv")
    assert len(profiles) == 40
    assert all(p.domain_attrs >= 1 and p.adjectives >= 1 for p in profiles)


def test_train_with_profiles(files):
    prof = files / "prof"
    if not (prof / "src_profiles.tsv").exists():
        pytest.skip("annotate test did not run")
    out = files / "run_clf"
    code = run(["train", "--config", str(files / "c.cfg"), "--src", str(files / "s.txt"), "--tgt",
                str(files / "t.txt"), "--out", str(out), "--profiles", str(prof), *TINY,
                "--lambda_clf", "1", "--lambda_con", "1"])
    assert code == 0
    assert read_metrics(out / "metrics.log")[-1]["l_clf_enc"] > 0


def test_evaluate(files, trained):
    src = files / "s.txt"
    assert run(["evaluate", "--source", str(src), "--transferred", str(src), "--train-src", str(src),
                "--train-tgt", str(files / "t.txt"), "--ckpt", str(trained / "final.pt"),
                "--out", str(files / "ev"), "--adjectives", str(files / "adj.txt")]) == 0
    report = (files / "ev" / "eval_report.txt").read_text()
    # copying source sentences: perfect similarity, every constraint kept, mostly judged source
    assert "SIM\t100.0000" in report and "F1[length]\t1.0000" in report
    acc = float(report.split("ACC\t")[1].split()[0])
    assert acc < 50
    assert (files / "ev" / "eval_sentences.tsv").exists()


def test_evaluate_external_scores(files, tmp_path):
    src = files / "s.txt"
    for name in ("acc", "fl", "sim"):
        (tmp_path / f"{name}.tsv").write_text("".join(f"{i}\t1\n" for i in range(40)))
    assert run(["evaluate", "--source", str(src), "--transferred", str(src), "--train-src", str(src),
                "--train-tgt", str(files / "t.txt"), "--out", str(tmp_path / "ev"),
                *[x for n in ("acc", "fl", "sim") for x in (f"--{n}-scores", str(tmp_path / f"{n}.tsv"))]]) == 0
    assert "AGG\t100.0000" in (tmp_path / "ev" / "eval_report.txt").read_text()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "coopdct", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("annotate", "mine-attrs", "train", "transfer", "evaluate"):
        assert cmd in proc.stdout
    assert subprocess.run([sys.executable, "-m", "coopdct", "bogus"], capture_output=True).returncode == 1
