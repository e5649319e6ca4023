import warnings

import numpy as np
import pytest
import yaml

from stocs.scenario import (GOLDEN, ParseError, UnstableInitWarning, ValidationError, dumps_scenario,
                            golden_path, load_scenario, loads_scenario, save_scenario)


def golden_dict(name="box_pivot"):
    return yaml.safe_load(golden_path(name).read_text())


def test_golden_point_counts():
    assert load_scenario("box_pivot").object.n_points == 104
    assert load_scenario("peg_pivot").object.n_points == 104
    assert load_scenario("mustard_pivot").object.n_points == 247


@pytest.mark.parametrize("name", GOLDEN)
def test_golden_round_trip(name, tmp_path):
    sc = load_scenario(name)
    again = loads_scenario(dumps_scenario(sc))
    assert again.same_as(sc)
    assert np.array_equal(again.object.boundary_points, sc.object.boundary_points)
    save_scenario(sc, tmp_path / "s.yaml")
    assert load_scenario(tmp_path / "s.yaml").same_as(sc)


def test_missing_mass():
    d = golden_dict()
    del d["physics"]["mass"]
    with pytest.raises(ValidationError) as e:
        loads_scenario(yaml.safe_dump(d))
    assert e.value.field == "physics.mass"


@pytest.mark.parametrize("edit,field", [
    (lambda d: d["physics"].update(mass=-1.0), "physics.mass"),
    (lambda d: d["object"].update(outline=[[0, 0], [1, 0]]), "object.outline"),
    (lambda d: d["modes"][0].update(kind="rolling"), "modes[0].kind"),
    (lambda d: d["modes"][0].update(face=[[0.0, 0.0], [0.01, 0.0]]), "modes[0]"),
    (lambda d: d.update(q_goal=[0, 0]), "q_goal"),
    (lambda d: d["bounds"].update(workspace=[1, 0, 0, 1]), "bounds.workspace"),
    (lambda d: d["modes"].append(dict(d["modes"][0])), "modes"),
])
def test_validation_names_the_field(edit, field):
    d = golden_dict()
    edit(d)
    with pytest.raises(ValidationError) as e:
        loads_scenario(yaml.safe_dump(d), check_stability=False)
    assert e.value.field == field


def test_parse_error_location():
    text = "name: bad\nobject:\n  outline: [[0, 0], [1, 0]\nphysics: {mass: 1}\n"
    with pytest.raises(ParseError) as e:
        loads_scenario(text)
    assert e.value.line is not None and e.value.column is not None
    assert e.value.line >= 3


def test_clockwise_outline_is_reoriented():
    d = golden_dict()
    d["object"]["outline"] = d["object"]["outline"][::-1]
    sc = loads_scenario(yaml.safe_dump(d))
    o = sc.object.outline
    assert np.sum(o[:, 0] * np.roll(o[:, 1], -1) - np.roll(o[:, 0], -1) * o[:, 1]) > 0


def test_unstable_init_warns():
    d = golden_dict()
    d["q_init"] = [0.0, 0.5, 0.0]
    with pytest.warns(UnstableInitWarning):
        loads_scenario(yaml.safe_dump(d))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        loads_scenario(yaml.safe_dump(d), check_stability=False)
        load_scenario("box_pivot")


def test_mode_lookup():
    sc = load_scenario("task1_reverse")
    assert sc.mode("grasp_sides").kind == "fixed_points"
    with pytest.raises(KeyError):
        sc.mode("nope")
