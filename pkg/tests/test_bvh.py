from pathlib import Path

import numpy as np
import pytest

from motionudf.bvh import parse_bvh, read_bvh
from motionudf.errors import FormatError
from motionudf.motion import read_native

DATA = Path(__file__).parent / "data"


def test_positions_by_hand():
    s = read_bvh(DATA / "arm.bvh", scale=0.01)
    assert s.joints == ("Hips", "Chest", "Arm", "Arm_end") and s.fps == 30
    # frame 1: root moved and turned 90 degrees about z
    np.testing.assert_allclose(s.positions[1], [[0.01, 0.02, 0.03], [-0.09, 0.02, 0.03],
                                                [-0.09, 0.07, 0.03], [-0.09, 0.11, 0.03]], atol=1e-12)
    # frame 2: the arm turned 90 degrees about y, taking its end site to -z
    np.testing.assert_allclose(s.positions[2, 3], [0.05, 0.1, -0.04], atol=1e-12)


def test_matches_golden_native_file():
    assert read_bvh(DATA / "arm.bvh", scale=0.01) == read_native(DATA / "arm_golden.mot")


def test_end_sites_optional():
    s = read_bvh(DATA / "arm.bvh", include_end_sites=False)
    assert s.joints == ("Hips", "Chest", "Arm")


def _text():
    return (DATA / "arm.bvh").read_text()


@pytest.mark.parametrize("edit,line", [
    (lambda t: t.replace("Zrotation Yrotation Xrotation", "Xrotation Yrotation Zrotation"), 10),
    (lambda t: t.replace("OFFSET 5.0 0.0 0.0", "OFFSET 5.0 zero 0.0"), 12),
    (lambda t: t.replace("Frames: 3", "Frames: 4"), None),
    (lambda t: t.replace("CHANNELS 3 Zrotation Xrotation", "CHANNELS 3 Wrotation Xrotation"), 9),
])
def test_errors_carry_line_numbers(edit, line):
    with pytest.raises(FormatError) as info:
        parse_bvh(edit(_text()))
    if line is not None:
        assert info.value.line == line
