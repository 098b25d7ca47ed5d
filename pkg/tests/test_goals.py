"""Goal-term semantics: satisfaction at zero, gradients, SDF queries."""

import json

import numpy as np
import pytest

from cascadevq import autodiff as ad
from cascadevq.autodiff import Var
from cascadevq.errors import ConfigError, ShapeError
from cascadevq.goals import (CompositeGoal, ControlMask, JointGoal,
                             ObstacleGoal, RegionGoal, SdfGoal, SdfGrid,
                             goal_from_spec, load_sdf_grid, save_sdf_grid)

from helpers import directional_fd

RNG = np.random.default_rng(4)
SHAPE = (12, 6)


def _keyframes():
    return ControlMask.keyframes(SHAPE, [2, 7], [0, 1],
                                 RNG.normal(size=(2, 2)))


def test_mask_validation():
    with pytest.raises(ConfigError):
        ControlMask(np.full(SHAPE, 0.5), np.zeros(SHAPE))
    with pytest.raises(ShapeError):
        ControlMask(np.zeros(SHAPE), np.zeros((3, 3)))


def test_joint_goal_zero_at_targets():
    control = _keyframes()
    goal = JointGoal(control, sigma=0.5)
    satisfied = np.where(control.mask == 1, control.targets, 0.0)
    assert goal(Var(satisfied)).data == 0.0
    off = satisfied.copy()
    off[2, 0] += 1.0
    assert goal(Var(off)).data < 0.0


def test_goal_values_nonpositive_and_grads():
    goals = [
        JointGoal(_keyframes(), sigma=0.5),
        ObstacleGoal(center=[0.2, -0.1], radius=0.8, margin=0.1),
        RegionGoal(low=[-1.5, -1.5], high=[1.5, 1.5]),
    ]
    goals.append(CompositeGoal(list(goals), [1.0, 2.0, 0.5]))
    for goal in goals:
        for _ in range(5):
            x = RNG.normal(size=SHAPE)
            assert float(goal(Var(x)).data) <= 0.0
            assert directional_fd(goal, [x]) < 1e-5


def test_region_zero_inside():
    goal = RegionGoal(low=[-10.0, -10.0], high=[10.0, 10.0])
    assert goal(Var(RNG.normal(size=SHAPE))).data == 0.0


def test_sdf_trilinear_matches_function():
    grid = SdfGrid.from_function(
        lambda p: np.linalg.norm(p, axis=1) - 0.5,
        low=[-2, -2, -2], high=[2, 2, 2], resolution=(33, 33, 33))
    pts = RNG.uniform(-1.5, 1.5, size=(40, 3))
    pts = pts[np.linalg.norm(pts, axis=1) > 0.4][:20]  # away from the kink
    vals = grid.query(Var(pts)).data
    truth = np.linalg.norm(pts, axis=1) - 0.5
    assert np.abs(vals - truth).max() < 0.02


def test_sdf_out_of_bounds_clamps_with_warning():
    grid = SdfGrid.from_function(
        lambda p: p[:, 0], low=[-1, -1, -1], high=[1, 1, 1],
        resolution=(5, 5, 5))
    with pytest.warns(UserWarning):
        val = grid.query(Var(np.array([[5.0, 0.0, 0.0]]))).data
    assert np.isclose(val[0], 1.0, atol=1e-6)


def test_sdf_goal_grads_and_sign():
    grid = SdfGrid.from_function(
        lambda p: np.linalg.norm(p, axis=1) - 0.5,
        low=[-3, -3, -3], high=[3, 3, 3], resolution=(9, 9, 9))
    goal = SdfGoal(grid, point_channels=((0, 1, 2), (3, 4, 5)),
                   radii=(0.1, 0.05), contact_points=(1,),
                   contact_threshold=0.2)
    for _ in range(5):
        x = RNG.normal(size=SHAPE)
        assert float(goal(Var(x)).data) <= 0.0
        assert directional_fd(goal, [x]) < 1e-5


def test_sdf_file_round_trip(tmp_path):
    grid = SdfGrid.from_function(
        lambda p: p[:, 2], low=[-1, -1, -1], high=[1, 1, 1],
        resolution=(4, 5, 6))
    p1 = tmp_path / "g.sdf"
    p2 = tmp_path / "g2.sdf"
    save_sdf_grid(p1, grid)
    loaded = load_sdf_grid(p1)
    save_sdf_grid(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_goal_purity():
    goal = CompositeGoal([JointGoal(_keyframes()),
                          RegionGoal(low=[-1, -1], high=[1, 1])], [1.0, 1.0])
    x = RNG.normal(size=SHAPE)
    assert goal(Var(x)).data == goal(Var(x)).data


def test_spec_parser(tmp_path):
    spec = {"terms": [
        {"type": "joint", "frames": [2], "channels": [0, 1],
         "targets": [[1.0, 2.0]], "sigma": 0.5, "weight": 2.0},
        {"type": "region", "low": [-2, -2], "high": [2, 2]},
    ]}
    goal = goal_from_spec(spec, SHAPE)
    assert len(goal.terms) == 2
    with pytest.raises(ConfigError):
        goal_from_spec({"terms": [{"type": "nope"}]}, SHAPE)
