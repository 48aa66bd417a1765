import numpy as np
import pytest

from srtube import cli


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def scene(name, *overrides):
    """(config, model, surface, patch) for a built-in scene with --set style overrides."""
    cfg = cli.validate(cli.apply_overrides(cli.load_scene(name), overrides))
    model = cli.build_model(cfg)
    surface, patch = cli.build_surface_patch(cfg, model)
    return cfg, model, surface, patch
