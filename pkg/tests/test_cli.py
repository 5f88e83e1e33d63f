import json
import math

import pytest

from logdisp.cli import SUBCOMMANDS, main
from logdisp.parallel import ENV_VAR

BASE = """
[grid]
d = 1
n = 32
length = 30.0

[model]
lambda = {lam}
delta = {delta}
alpha1 = {alpha1}
{extra_model}

[noise]
epsilon = {eps}
dt = 0.02
horizon = {T}
seed = 5

[init]
kind = "gaussian"
amplitude = {amp}

{study}

[output]
dir = "out"
{output}
"""

AMP_MOMENT = math.sqrt(2 / math.sqrt(math.pi))


def write(tmp_path, name="run.toml", lam=1.0, delta=0.1, alpha1=0.5, eps=0.5, T=0.2, amp=1.0, study="",
          extra_model="", output=""):
    p = tmp_path / name
    p.write_text(BASE.format(lam=lam, delta=delta, alpha1=alpha1, eps=eps, T=T, amp=amp, study=study,
                             extra_model=extra_model, output=output))
    return p


def test_validate_writes_nothing(tmp_path, capsys):
    cfg = write(tmp_path)
    assert main(["validate", str(cfg)]) == 0
    assert "valid:" in capsys.readouterr().out
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run.toml"]


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, delta=-1.0)
    assert main(["validate", str(cfg)]) == 2
    assert "delta" in capsys.readouterr().err
    assert main(["simulate", str(tmp_path / "missing.toml")]) == 2


def test_simulate_deterministic(tmp_path):
    cfg = write(tmp_path, output="snapshots = [0.0, 0.2]",
                extra_model='potential = {kind = "gaussian", c = 1.0, sigma = 1.0}')
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "observables.csv").read_bytes()
    assert a == (tmp_path / "b" / "observables.csv").read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["study"] == "simulate" and man["seed"] == 5 and "version" in man and "wall_time" in man
    assert man["params"]["config"]["noise"]["epsilon"] == 0.5
    assert (tmp_path / "a" / "snapshot_000010.lsdf").exists()


def test_default_output_dir_relative_to_config(tmp_path):
    cfg = write(tmp_path)
    assert main(["simulate", str(cfg)]) == 0
    assert (tmp_path / "out" / "observables.csv").exists()


def test_skeleton(tmp_path):
    cfg = write(tmp_path, study='[study]\nname = "skeleton"\nintervals = 5\namplitude = 2.0')
    assert main(["skeleton", str(cfg)]) == 0
    assert (tmp_path / "out" / "control.csv").exists()
    # replay the written control
    cfg2 = write(tmp_path, "replay.toml", study='[study]\nname = "skeleton"\ncontrol_file = "out/control.csv"')
    assert main(["skeleton", str(cfg2), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "observables.csv").read_text().splitlines()[1:] == \
        (tmp_path / "out" / "observables.csv").read_text().splitlines()[1:]


def test_mam_unreachable_exit_one(tmp_path):
    study = '[study]\nname = "mam"\nintervals = 1\ntarget = 500.0\nsteps = 4\nstages = 2\nmax_iter = 10'
    cfg = write(tmp_path, lam=0.25, alpha1=1.0, study=study)
    assert main(["mam", str(cfg)]) == 1
    data = json.loads((tmp_path / "out" / "mam_result.json").read_text())
    assert data["converged"] is False


def test_mam_reachable(tmp_path):
    study = '[study]\nname = "mam"\nintervals = 1\ntarget = 2.4\nsteps = 8'
    cfg = write(tmp_path, lam=0.25, alpha1=1.0, study=study)
    assert main(["mam", str(cfg)]) == 0
    data = json.loads((tmp_path / "out" / "mam_result.json").read_text())
    assert data["converged"] and data["action"] > 0 and data["M_c"] == 1


def test_exit_mc_worker_independent(tmp_path, monkeypatch):
    study = '[study]\nname = "exit-mc"\nradius = 2.3\nnorm = "x1"\neps = [0.5, 0.1]\nensemble = 300'
    cfg = write(tmp_path, lam=0.25, alpha1=1.0, study=study)
    outs = []
    for w in ("1", "3"):
        monkeypatch.setenv(ENV_VAR, w)
        assert main(["exit-mc", str(cfg), "--out", str(tmp_path / w)]) == 0
        outs.append((tmp_path / w / "exit_mc.csv").read_bytes() + (tmp_path / w / "exit_records.csv").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].decode().splitlines()[0] == "eps,count,n,p_hat,ci_low,ci_high,eps_log_p"


def test_bad_worker_env(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_VAR, "zero")
    assert main(["simulate", str(write(tmp_path))]) == 2


def test_prop53_and_refusal(tmp_path):
    study = '[study]\nname = "prop53"\nradius = 1.4142135623730951\neps = [0.5, 0.2]\nensemble = 100'
    cfg = write(tmp_path, lam=0.25, delta=0.0, alpha1=1.0, amp=AMP_MOMENT, T=0.4, study=study)
    assert main(["prop53", str(cfg)]) == 0
    head = (tmp_path / "out" / "prop53.csv").read_text().splitlines()[0]
    assert head.endswith("level,margin,bound_holds,non_asymptotic")
    bad = write(tmp_path, "bad.toml", lam=0.25, delta=0.0, alpha1=1.0, amp=AMP_MOMENT,
                study=study.replace("1.4142135623730951", "0.5"))
    assert main(["prop53", str(bad)]) == 2


def test_delta_scaling_disp_ldp(tmp_path):
    cases = {
        "delta-study": '[study]\nname = "delta-study"\ndeltas = [0.1, 0.01]\nensemble = 3',
        "scaling-check": '[study]\nname = "scaling-check"',
        "disp-study": '[study]\nname = "disp-study"\neps = [1.0, 10.0]\np = 4\nensemble = 3',
        "ldp-probe": '[study]\nname = "ldp-probe"\nrho = 1.0\neps = [1.0, 0.5]\nensemble = 100\nintervals = 1\nstages = 2',
    }
    files = {"delta-study": "delta_study.csv", "scaling-check": "scaling.csv", "disp-study": "disp_study.csv",
             "ldp-probe": "ldp_probe.csv"}
    for sub, study in cases.items():
        kw = dict(delta=0.0, alpha1=0.0) if sub == "disp-study" else {}
        cfg = write(tmp_path, f"{sub}.toml", study=study, **kw)
        assert main([sub, str(cfg), "--out", str(tmp_path / sub)]) == 0, sub
        assert (tmp_path / sub / files[sub]).exists()
        assert (tmp_path / sub / "manifest.json").exists()


def test_disp_study_requires_free_model(tmp_path):
    cfg = write(tmp_path, study='[study]\nname = "disp-study"\neps = [1.0, 10.0]\nensemble = 3')
    assert main(["disp-study", str(cfg)]) == 2


def test_all_subcommands_listed():
    assert set(SUBCOMMANDS) == {"simulate", "skeleton", "mam", "exit-mc", "prop53", "delta-study",
                                "scaling-check", "disp-study", "ldp-probe", "validate"}


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["fly", "x.toml"])
    assert exc.value.code == 2
