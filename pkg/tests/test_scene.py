import json
import re

import numpy as np
import pytest

from emimaging.core_model import Ellipsoid, reflectivity_from_ellipsoid
from emimaging.scene import (
    SchemaError,
    bundled,
    load_plan,
    load_scene,
    parse_plan,
    parse_scene,
    scene_to_dict,
)

from conftest import SMALL_SCENE


def test_bundled_files_load():
    for name in bundled("scenes"):
        sc = load_scene(name)
        assert sc.grid is not None and len(sc.inclusions) >= 1
    for name in bundled("plans"):
        load_plan(name)
    expected = {"fig_svd1", "fig_nlev", "fig_music", "fig_imagesNF", "hist_nf", "hist_ff",
                "table1", "fig_3t_near", "fig_3t_far", "smoke"}
    assert expected <= set(bundled("plans"))


def test_bundled_scene_contents():
    sc = load_scene("single_large")
    assert sc.geometry.n_sensors == 441
    assert np.allclose(sc.centers, [[1, -1, 10]])
    assert sc.inclusions[0].rho[0, 0] == pytest.approx(55.4)
    assert len(load_scene("three_small").inclusions) == 3


@pytest.mark.parametrize("mutate, where", [
    (lambda s: s.pop("array"), "scene.array"),
    (lambda s: s.__setitem__("inclusions", []), "scene.inclusions"),
    (lambda s: s["inclusions"][0].pop("center"), "scene.inclusions[0].center"),
    (lambda s: s["inclusions"][0].__setitem__("rho", [[1, 2], [3, 4]]), "scene.inclusions[0].rho"),
    (lambda s: s["inclusions"][0].__setitem__("rho", [[1, 2, 0], [3, 4, 0], [0, 0, 1]]), "scene.inclusions[0]"),
    (lambda s: s.__setitem__("sensing", "4"), "scene.sensing"),
    (lambda s: s["grid"].__setitem__("step", -1), "scene.grid"),
])
def test_schema_errors_name_the_field(mutate, where):
    obj = json.loads(json.dumps(SMALL_SCENE))
    mutate(obj)
    with pytest.raises(SchemaError, match="^" + re.escape(where)):
        parse_scene(obj)


def test_ellipsoid_inclusion_and_roundtrip():
    obj = json.loads(json.dumps(SMALL_SCENE))
    obj["inclusions"] = [{"center": [0, 0, 4], "ellipsoid": {"semiaxes": [1, 2, 3], "contrast": 10}}]
    sc = parse_scene(obj)
    assert np.allclose(sc.inclusions[0].rho, reflectivity_from_ellipsoid(Ellipsoid((1, 2, 3), 10.0)))
    back = parse_scene(scene_to_dict(sc))
    assert np.allclose(back.geometry.positions, sc.geometry.positions)
    assert np.allclose(back.inclusions[0].rho, sc.inclusions[0].rho)


def test_plan_validation():
    ok = {"kind": "spectrum", "scene": "single_large", "fractions": [0.1]}
    assert parse_plan(ok).trials == 100
    for bad, where in [({**ok, "trials": 0}, "plan.trials"), ({**ok, "fractions": [-1]}, "plan.fractions"),
                       ({**ok, "kind": "x"}, "plan.kind"), ({**ok, "bogus": 1}, "plan.bogus"),
                       ({"kind": "spectrum", "scene": "a"}, "plan.fractions")]:
        with pytest.raises(SchemaError, match=where):
            parse_plan(bad)
    with pytest.raises(SchemaError):
        load_scene("no_such_scene")
