import json

import pytest

ACCEPTANCE_LINES: list[str] = []

SMALL_SCENE = {
    "name": "small",
    "array": {"side_count": 9, "spacing": 0.5, "L": 4.0},
    "inclusions": [
        {"center": [0.5, -0.5, 4.0], "rho": [[55.4, -7.28, 13.43], [-7.28, 70.82, 22.64],
                                            [13.43, 22.64, 70.75]]},
    ],
    "sensing": "123",
    "grid": {"lower": [-1.5, -2.0, 3.0], "upper": [2.0, 1.0, 5.0], "step": 0.5},
}


@pytest.fixture
def small_scene_file(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_SCENE))
    return path


@pytest.fixture
def write_plan(tmp_path, small_scene_file):
    def make(**kw):
        plan = {"name": "t", "kind": "localization", "scene": str(small_scene_file),
                "fractions": [0.3], "trials": 3, "seed": 11}
        plan.update(kw)
        path = tmp_path / f"plan_{plan['name']}.json"
        path.write_text(json.dumps(plan))
        return path
    return make


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
