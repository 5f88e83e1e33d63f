import numpy as np
import pytest

from logdisp import grid as fc
from logdisp.config import ConfigError, parse_config
from logdisp.snapshot import write_field

MINIMAL = """
[grid]
d = 1
n = 64
length = 40.0

[model]
lambda = 1.0

[noise]
dt = 0.01
horizon = 1.0
"""


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.splitting == "strang" and cfg.model.quad_order == 8
    assert cfg.model.delta == 0 and cfg.model.alpha1 == 0 and cfg.model.potential is None
    assert cfg.eps == 1.0 and cfg.seed == 0 and cfg.steps == 100
    assert cfg.init["kind"] == "gaussian" and cfg.study == {}
    np.testing.assert_array_equal(cfg.initial_field(), fc.gaussian(cfg.grid))


def test_unknown_key_names_siblings():
    text = MINIMAL.replace("dt = 0.01", "dt = 0.01\nepsilonn = 0.5")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    msg = str(exc.value)
    assert "'epsilonn'" in msg and "dt, epsilon, horizon, seed" in msg
    assert exc.value.line == 12 and exc.value.col == 1


def test_negative_delta_cites_invariant():
    with pytest.raises(ConfigError, match=r"delta must be >= 0") as exc:
        parse_config(MINIMAL.replace("lambda = 1.0", "lambda = 1.0\ndelta = -1"))
    assert exc.value.line == 9


@pytest.mark.parametrize("old,new,match", [
    ("n = 64", "n = 60", "power of two"),
    ("lambda = 1.0", "lambda = 0.0", "lambda"),
    ("horizon = 1.0", "horizon = 1.005", "multiple"),
    ("[noise]", "[noise]\nseed = -3", "seed"),
    ("[noise]", "[noise]\nepsilon = -1.0", "eps"),
    ("[model]", "[model]\nsplitting = \"yoshida\"", "splitting"),
    ("[model]", "[model]\nalpha1 = true", "boolean"),
    ("[grid]", "[grids]\n[grid]", "unknown section"),
    ("lambda = 1.0", "lambda = \"one\"", "expected"),
])
def test_rejections(old, new, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(MINIMAL.replace(old, new, 1))


def test_missing_required():
    with pytest.raises(ConfigError, match="'lambda'"):
        parse_config(MINIMAL.replace("lambda = 1.0", ""))
    with pytest.raises(ConfigError, match=r"\[grid\]"):
        parse_config(MINIMAL.split("[model]")[0].replace("[grid]", "[output]").replace("d = 1", "")
                     .replace("n = 64", "").replace("length = 40.0", "") + "[model]\nlambda=1\n")


def test_syntax_error_location():
    with pytest.raises(ConfigError) as exc:
        parse_config("[grid]\nd = = 1\n")
    assert exc.value.line == 2


def test_potential_variants(tmp_path):
    cfg = parse_config(MINIMAL.replace("lambda = 1.0", 'lambda = 1.0\npotential = {kind = "gaussian", c = 2.0, sigma = 0.5}'))
    np.testing.assert_allclose(cfg.model.potential.samples.max(), 2.0)
    with pytest.raises(ConfigError, match="'sigmaa'") as exc:
        parse_config(MINIMAL.replace("lambda = 1.0", 'lambda = 1.0\npotential = {kind = "gaussian", sigmaa = 1}'))
    assert exc.value.col is not None
    with pytest.raises(ConfigError, match="not found"):
        parse_config(MINIMAL.replace("lambda = 1.0", 'lambda = 1.0\npotential = {kind = "file", path = "nope.lsdf"}'),
                     tmp_path)
    g = fc.make_grid(1, 64, 40.0)
    write_field(tmp_path / "v.lsdf", g, np.exp(-g.x**2) + 0j)
    cfg = parse_config(MINIMAL.replace("lambda = 1.0", 'lambda = 1.0\npotential = {kind = "file", path = "v.lsdf"}'),
                       tmp_path)
    np.testing.assert_array_equal(cfg.model.potential.samples, np.exp(-g.x**2))
    with pytest.raises(ConfigError, match="potential"):
        parse_config(MINIMAL.replace("lambda = 1.0", 'lambda = 1.0\npotential = "harmonic"'))


def test_init_variants(tmp_path):
    cfg = parse_config(MINIMAL + '[init]\nkind = "plane_wave"\nk = 2\namplitude = 0.5\n')
    np.testing.assert_allclose(np.abs(cfg.initial_field()), 0.5)
    with pytest.raises(ConfigError, match="'width'"):
        parse_config(MINIMAL + '[init]\nkind = "plane_wave"\nwidth = 2\n')
    with pytest.raises(ConfigError, match="width must be positive"):
        parse_config(MINIMAL + '[init]\nwidth = 0\n')
    g = fc.make_grid(1, 64, 40.0)
    write_field(tmp_path / "u.lsdf", g, fc.gaussian(g, 2.0))
    cfg = parse_config(MINIMAL + '[init]\nkind = "file"\npath = "u.lsdf"\n', tmp_path)
    np.testing.assert_array_equal(cfg.initial_field(), fc.gaussian(g, 2.0))
    write_field(tmp_path / "w.lsdf", fc.make_grid(1, 32, 40.0), np.zeros(32))
    with pytest.raises(ConfigError, match="config grid"):
        parse_config(MINIMAL + '[init]\nkind = "file"\npath = "w.lsdf"\n', tmp_path)


def test_snapshots_must_be_grid_times():
    cfg = parse_config(MINIMAL + "[output]\nsnapshots = [0.0, 0.5, 1.0]\n")
    assert cfg.snapshot_steps() == [0, 50, 100]
    with pytest.raises(ConfigError, match="grid time"):
        parse_config(MINIMAL + "[output]\nsnapshots = [0.505]\n")
    with pytest.raises(ConfigError, match="grid time"):
        parse_config(MINIMAL + "[output]\nsnapshots = [2.0]\n")


def test_study_sections():
    cfg = parse_config(MINIMAL + '[study]\nname = "exit-mc"\nradius = 3.0\neps = [0.2, 0.1]\nensemble = 200\n')
    assert cfg.study == {"name": "exit-mc", "radius": 3.0, "norm": "x1", "eps": [0.2, 0.1], "ensemble": 200}
    with pytest.raises(ConfigError, match="unknown study"):
        parse_config(MINIMAL + '[study]\nname = "exit"\n')
    with pytest.raises(ConfigError, match="'ensemble'"):
        parse_config(MINIMAL + '[study]\nname = "exit-mc"\nradius = 3.0\neps = [0.2]\n')
    with pytest.raises(ConfigError, match="decreasing"):
        parse_config(MINIMAL + '[study]\nname = "exit-mc"\nradius = 3.0\neps = [0.1, 0.2]\nensemble = 200\n')
    with pytest.raises(ConfigError, match="at least 100"):
        parse_config(MINIMAL + '[study]\nname = "prop53"\nradius = 3.0\neps = [0.2]\nensemble = 20\n')
    with pytest.raises(ConfigError, match="subcommand"):
        parse_config(MINIMAL + '[study]\nname = "mam"\nintervals = 2\ntarget = 3.0\n', study="exit-mc")
    with pytest.raises(ConfigError, match="'radiuss'"):
        parse_config(MINIMAL + '[study]\nradiuss = 1\n', study="exit-mc")
    with pytest.raises(ConfigError, match="p must be 4 or 6"):
        parse_config(MINIMAL + '[study]\nname = "disp-study"\neps = [1, 10]\np = 3\nensemble = 5\n')
