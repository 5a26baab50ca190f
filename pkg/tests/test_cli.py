import csv

import pytest

from x0lab import cli


def run(*argv):
    return cli.main(list(argv))


def test_identity_check_default_passes(tmp_path, capsys):
    assert run("identity-check", "--out-dir", str(tmp_path), "--n-random", "2000", "--grad-batches", "10") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    rows = list(csv.DictReader(open(tmp_path / "identities.csv")))
    assert rows and all(float(r["worst_rel_err"]) < 1e-9 or r["identity"].endswith("(cancellation)") for r in rows)


def test_identity_check_tol_zero_fails(tmp_path, capsys):
    assert run("identity-check", "--out-dir", str(tmp_path), "--n-random", "50", "--tol", "0") == 2
    assert "FAIL" in capsys.readouterr().out


def test_identity_check_vacuous(tmp_path, capsys, caplog):
    assert run("identity-check", "--out-dir", str(tmp_path), "--n-random", "0") == 0
    assert "vacuous" in capsys.readouterr().out
    assert "vacuous" in caplog.text


def test_manifest_written_first_and_has_header(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise OSError("disk on fire")

    monkeypatch.setattr(cli, "algebra_identities", boom)
    assert run("identity-check", "--out-dir", str(tmp_path)) == 4
    text = (tmp_path / "manifest.ini").read_text()
    assert text.startswith("# manifest\n")
    for key in ("config_hash", "prng", "version", "command = identity-check"):
        assert key in text


def test_train_and_replay_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--out-dir", str(a), "--steps", "20", "--eval-every", "10", "--image-side", "8", "--seed", "4") == 0
    assert run("train", "--out-dir", str(b), "--config", str(a / "manifest.ini")) == 0
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
    assert (a / "manifest.ini").read_bytes() == (b / "manifest.ini").read_bytes()
    head = (a / "curve.csv").read_text().splitlines()[0]
    assert head == "step,value,metric_name"


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\nsteps = 10\neval_every = 5\n[task]\nimage_side = 6\n")
    assert run("train", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "--steps", "5") == 0
    rows = (tmp_path / "o" / "curve.csv").read_text().splitlines()
    assert len(rows) == 2


def test_bad_config_exit_4(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\nnot_a_key = 3\n")
    assert run("train", "--config", str(cfg), "--out-dir", str(tmp_path)) == 4
    assert run("train", "--config", str(tmp_path / "missing.ini"), "--out-dir", str(tmp_path)) == 4
    cfg.write_text("this is not ini")
    assert run("train", "--config", str(cfg), "--out-dir", str(tmp_path)) == 4


def test_bad_usage_exit_4():
    with pytest.raises(SystemExit) as e:
        run("train", "--no-such-flag")
    assert e.value.code == 4


def test_divergence_exit_3(tmp_path, monkeypatch):
    import x0lab.toytrainer as tt

    monkeypatch.setattr(tt, "DIVERGENCE_LOSS", -1.0)
    assert run("train", "--out-dir", str(tmp_path), "--steps", "2", "--image-side", "6") == 3


def test_compare_identical_arms_and_failed_arm(tmp_path, monkeypatch, capsys):
    out = tmp_path / "cmp"
    args = ["compare", "--out-dir", str(out), "--steps", "10", "--eval-every", "5", "--image-side", "6"]
    assert run(*args, "--supervisions", "eps,eps", "--seeds", "2") == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 2
    strip = lambda r: {k: v for k, v in r.items() if k not in ("arm",)}
    assert strip(rows[0]) == strip(rows[1])
    assert (out / "curves.svg").read_text().startswith("<svg")
    # one arm fails, the other still runs
    import x0lab.cli as c

    real = c.train

    def flaky(cfg, task, **kw):
        if cfg.supervision == "x0_from_native":
            raise c.TrainingDivergence("synthetic")
        return real(cfg, task, **kw)

    monkeypatch.setattr(c, "train", flaky)
    out2 = tmp_path / "cmp2"
    code = run("compare", "--out-dir", str(out2), "--steps", "10", "--eval-every", "5", "--image-side", "6", "--seeds", "1")
    assert code == 3
    rows = list(csv.DictReader(open(out2 / "summary.csv")))
    assert rows[0]["runs"] == "1" and rows[1]["failed"] == "1"


def test_compare_needs_two_supervisions(tmp_path):
    assert run("compare", "--out-dir", str(tmp_path), "--supervisions", "eps") == 4


def test_maucc_command(tmp_path, capsys):
    p = tmp_path / "ramp.csv"
    p.write_text("step,value\n" + "".join(f"{s},{s / 1000}\n" for s in range(0, 1001)))
    svg = tmp_path / "plot.svg"
    code = run("maucc", str(p), "--out-dir", str(tmp_path / "m"), "--max-value", "1", "--ema", "0", "--svg", str(svg))
    assert code == 0
    out = capsys.readouterr().out
    assert "mAUCC = 31.250000" in out
    assert svg.read_text().count("<polyline") == 2
    assert (tmp_path / "m" / "aucc.csv").read_text().startswith("horizon,aucc\n")
    assert run("maucc", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)) == 4
    assert run("maucc", "--out-dir", str(tmp_path)) == 4


def test_maucc_lower_better_and_horizons(tmp_path, capsys):
    p = tmp_path / "c.csv"
    p.write_text("step,value\n0,0.5\n10,0.5\n")
    assert run("maucc", str(p), "--out-dir", str(tmp_path), "--max-value", "1", "--horizons", "0.5,1.0", "--direction", "lower_better") == 0
    out = capsys.readouterr().out
    assert "mAUCC = 50.000000" in out and "lower is better" in out


def test_sample_command(tmp_path):
    assert run("sample", "--out-dir", str(tmp_path), "--n-chains", "20", "--dim", "3", "--n-steps", "10") == 0
    rows = (tmp_path / "samples.csv").read_text().splitlines()
    assert rows[0] == "chain,x0,x1,x2" and len(rows) == 21
    first = (tmp_path / "samples.csv").read_bytes()
    assert run("sample", "--out-dir", str(tmp_path / "r"), "--config", str(tmp_path / "manifest.ini")) == 0
    assert (tmp_path / "r" / "samples.csv").read_bytes() == first
