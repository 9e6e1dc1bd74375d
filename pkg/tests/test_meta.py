import pytest

from degsde import laws
from degsde.families import family_spec
from degsde.simulate import SimConfig


@pytest.mark.slow
def test_uniqueness_pass_rate_on_gaussian_spec():
    # zero drift and constant A: the scheme is exact in law, so a coarse dt is fine
    cfg = SimConfig(dt=1e-2, T=1.0, y=(1.0, 0.0), n_paths=20_000, seed=100)
    rep = laws.uniqueness_meta(family_spec("constant_gaussian"), cfg, repetitions=20)
    assert rep["pass_rate"] >= 0.95, rep["min_p_values"]
