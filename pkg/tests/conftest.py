"""Shared fixtures: the standard one-flake illumination scene used by the
rule-detector fragility tests and the acceptance suite."""

import math

import pytest

from flakescan.core import Category, Material, Polygon
from flakescan.ruledet import RuleParams
from flakescan.synthcam import ChipScene, Flake, OpticsConfig


def hexagon(cx, cy, r):
    return Polygon(
        [(cx + r * math.cos(a), cy + r * math.sin(a))
         for a in [k * math.pi / 3 for k in range(6)]]
    )


def make_illumination_fixture():
    """One 10-layer WTe2 flake centered in a single 256 µm tile at 1 µm/px,
    with rule params calibrated against the nominal illumination.

    WTe2 at 10 layers darkens the three channels by fractions
    (0.05, 0.08, 0.11); the windows bracket those with room for the
    rendering noise but exclude the background.
    """
    scene = ChipScene(
        chip_id="fig2-chip",
        extent_um=(256.0, 256.0),
        flakes=(Flake(hexagon(128.0, 128.0, 30.0), Material.WTe2, 10),),
        seed=220,
    )
    optics = OpticsConfig(fov_um=(256.0, 256.0), sensor_px=(256, 256))
    params = RuleParams(
        reference_color=(170.0, 110.0, 200.0),
        contrast_windows=((0.02, 0.09), (0.03, 0.13), (0.06, 0.16)),
        min_area=200,
        max_area=20_000,
        category=Category.from_name("WTe2_few"),
    )
    return scene, optics, params


@pytest.fixture
def illumination_fixture():
    return make_illumination_fixture()
