import json
import os

import pytest

from mfrules import cli
from mfrules.errors import NumericalError


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "--n", "150", "--m", "40", "--groups", "4",
                     "--seed", "3"]) == 0
    return out


def _data(d):
    return ["--data", str(d / "data.svm"), "--feature-names", str(d / "features.txt")]


def test_synth_files(synth_dir):
    for name in ("data.svm", "features.txt", "domain_map.tsv", "manifest.txt"):
        assert (synth_dir / name).exists()


def test_train_and_reuse_model(synth_dir, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert cli.main(["train", *_data(synth_dir), "--model", str(model), "--C-grid", "0.1,1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_test"] == 30 and 0.0 <= out["test_accuracy"] <= 1.0
    assert cli.main(["explain", *_data(synth_dir), "--model", str(model), "--rep", "DDMF-NMF",
                     "--k", "4", "--depth", "2", "--out", str(tmp_path / "ex")]) == 0
    text = (tmp_path / "ex" / "rules_DDMF-NMF.txt").read_text()
    assert text.startswith("IF ")
    assert (tmp_path / "ex" / "space_DDMF-NMF.json").exists()


def test_explain_domain(synth_dir, tmp_path):
    assert cli.main(["explain", *_data(synth_dir), "--rep", "DomainMF", "--domain-map",
                     str(synth_dir / "domain_map.tsv"), "--depth", "2", "--C-grid", "1",
                     "--out", str(tmp_path)]) == 0
    rules = json.loads((tmp_path / "rules_DomainMF.json").read_text())
    assert rules["representation"] == "DomainMF"


def test_stability_command(synth_dir, capsys):
    assert cli.main(["stability", *_data(synth_dir), "--rep", "FG", "--depth", "2", "--B", "4",
                     "--C-grid", "1"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["n_pairs"] == 6 and 0.0 <= out["mean_jaccard"] <= 1.0


def test_sweep_with_config(synth_dir, tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(f"data = {synth_dir / 'data.svm'}\nrepresentations = FG,DDMF-SVD\n"
                   f"k_grid = 3,6\ndepths = 1,2\nn_folds = 3\nC_grid = 1\nB = 3\n")
    out = tmp_path / "out"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    assert "| DDMF-SVD |" in capsys.readouterr().out
    assert (out / "report.json").exists() and (out / "curves" / "stability_vs_k.csv").exists()


def test_compare_pairs(tmp_path, capsys):
    src = os.path.join(os.path.dirname(__file__), "data", "published_fg_vs_ddmf.csv")
    pairs = tmp_path / "pairs.csv"
    with open(src) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    i_fg, i_dd = header.index("FG_fidelity"), header.index("DDMF_fidelity")
    pairs.write_text("FG,DDMF-NMF\n" + "".join(
        f"{row.split(',')[i_fg]},{row.split(',')[i_dd]}\n" for row in lines[1:]))
    assert cli.main(["compare", "--pairs", str(pairs)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["T"] == 2 and res["n"] == 9 and "0.01" in [str(a) for a in res["significant_at"]]


def test_exit_codes(tmp_path, monkeypatch):
    assert cli.main(["train", "--data", str(tmp_path / "missing.svm"), "--model", "x"]) == 2
    bad = tmp_path / "bad.svm"
    bad.write_text("1 3:1 3:2\n")
    assert cli.main(["train", "--data", str(bad), "--model", "x"]) == 2
    assert cli.main(["sweep", "--representations", "FG,NOPE", "--data", str(bad)]) == 1
    assert cli.main(["sweep", "--representations", "FG"]) == 1

    def boom(cfg):
        raise NumericalError("diverged")
    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["sweep", "--data", str(bad), "--representations", "FG"]) == 3
