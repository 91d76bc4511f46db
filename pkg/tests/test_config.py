import pytest

from nsassim.config import (
    ConfigFieldError, ExperimentConfig, apply_override, load_config,
)

GOOD = """
[grid]
nx = 10
ny = 10
nt = 6
t_end = 0.3

[physics]
nu = 0.01
lambda = 0.4

[observation]
kind = vorticity
noise_amplitude = 0.05
seed = 7

[schedule]
p_list = 2,4,8
warm_start = true

[optimizer]
max_iters = 100
grad_tol = 1e-5

[output]
directory = runs/demo
plots = false
"""


def test_defaults_validate():
    cfg = ExperimentConfig()
    grid = cfg.validate()
    assert grid.nx == 16
    assert cfg.p_list[0] == 2.0 and cfg.p_list[-1] == 128.0


def test_parse_good_config():
    cfg = load_config(text=GOOD)
    assert cfg.nx == 10 and cfg.lam == 0.4
    assert cfg.kind == "vorticity"
    assert cfg.p_list == (2.0, 4.0, 8.0)
    assert cfg.max_iters == 100
    assert cfg.plots is False


def test_lambda_out_of_range_names_field():
    bad = GOOD.replace("lambda = 0.4", "lambda = 1.5")
    with pytest.raises(ConfigFieldError) as err:
        load_config(text=bad)
    assert "physics.lambda" in str(err.value)


def test_unknown_key_rejected():
    bad = GOOD.replace("[grid]\nnx", "[grid]\nresolution = 4\nnx", 1)
    with pytest.raises(ConfigFieldError, match="unknown"):
        load_config(text=bad)


def test_unknown_section_rejected():
    with pytest.raises(ConfigFieldError, match="unknown section"):
        load_config(text=GOOD + "\n[turbulence]\nmodel = none\n")


def test_unparseable_value_names_field():
    bad = GOOD.replace("nx = 10", "nx = ten")
    with pytest.raises(ConfigFieldError) as err:
        load_config(text=bad)
    assert "grid.nx" in str(err.value)


def test_bad_schedule_rejected():
    bad = GOOD.replace("p_list = 2,4,8", "p_list = 8,4")
    with pytest.raises(ConfigFieldError, match="schedule.p_list"):
        load_config(text=bad)


def test_grid_invariants_checked():
    bad = GOOD.replace("nx = 10", "nx = 3")
    with pytest.raises(ConfigFieldError, match="grid"):
        load_config(text=bad)


def test_round_trip_through_ini():
    cfg = load_config(text=GOOD)
    again = load_config(text=cfg.to_ini())
    assert again == cfg


def test_apply_override():
    cfg = load_config(text=GOOD)
    out = apply_override(cfg, "physics.lambda", "0.25")
    assert out.lam == 0.25
    assert out.nx == cfg.nx
    with pytest.raises(ConfigFieldError, match="unknown parameter"):
        apply_override(cfg, "physics.gravity", "9.8")
    with pytest.raises(ConfigFieldError):
        apply_override(cfg, "physics.lambda", "2.0")


def test_build_setup_runs_invariants():
    cfg = load_config(text=GOOD)
    setup = cfg.build_setup()
    assert setup.nu == 0.01
    assert setup.lam == 0.4
