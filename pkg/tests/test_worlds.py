import numpy as np
import pytest

from sigtraj.paths import Path
from sigtraj.splines import SplineTrajectory
from sigtraj.worlds import (
    OccupancyField,
    PlanarArm,
    PointMassEnv,
    TerrainField,
    arm_total_cost,
    dyn_cost,
    end_effector_length_cost,
    halton_points,
    occupancy_cost,
    pointmass_running_cost,
    pointmass_terminal_cost,
    pull_gradient,
    self_collision_cost,
    terrain_cost,
)


class TestTerrain:
    def test_first_five_halton_points(self):
        pts = halton_points(5, start=1)
        expected = np.array([[1 / 2, 1 / 3], [1 / 4, 2 / 3], [3 / 4, 1 / 9],
                             [1 / 8, 4 / 9], [5 / 8, 7 / 9]])
        np.testing.assert_allclose(pts, expected, atol=1e-15)

    def test_determinism(self):
        a = TerrainField.create(15, seed=3)
        b = TerrainField.create(15, seed=3)
        np.testing.assert_array_equal(a.centers, b.centers)
        c = TerrainField.create(15, seed=4)
        assert not np.array_equal(a.centers, c.centers)

    def test_pure_length_term(self):
        field = TerrainField(centers=np.zeros((0, 2)), std=0.08)
        t = np.linspace(0, 1, 100)
        path = Path(times=t, vertices=np.column_stack([t, np.zeros(100)]))
        cost, grad = terrain_cost(field, path)
        assert cost == pytest.approx(75.0, abs=1e-9)

    def test_repeated_vertex_path_density_only(self):
        field = TerrainField.create(5, seed=0)
        path = Path.from_vertices(np.tile([[0.5, 0.5]], (7, 1)))
        cost, grad = terrain_cost(field, path)
        dens = field.density(np.array([[0.5, 0.5]]))[0]
        assert cost == pytest.approx(7 * dens, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        field = TerrainField.create(8, seed=1)
        for _ in range(10):
            verts = rng.uniform(0.05, 0.95, size=(9, 2))
            path = Path.from_vertices(verts)
            _, grad = terrain_cost(field, path)
            h = 1e-6
            for idx in [(0, 0), (3, 1), (8, 0), (5, 0)]:
                vp, vm = verts.copy(), verts.copy()
                vp[idx] += h
                vm[idx] -= h
                fd = (terrain_cost(field, Path.from_vertices(vp))[0]
                      - terrain_cost(field, Path.from_vertices(vm))[0]) / (2 * h)
                assert grad[idx] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_grid_export_shape(self):
        field = TerrainField.create(3)
        text = field.density_grid_csv(resolution=16)
        rows = text.strip().split("\n")
        assert len(rows) == 16 and len(rows[0].split(",")) == 16


class TestPointMass:
    def open_env(self, **kw):
        return PointMassEnv(obstacle_grid=0, arena_halfwidth=100.0, **kw)

    def test_free_particle_constant_velocity(self):
        env = self.open_env()
        env.vel = np.array([0.3, -0.2])
        p0 = env.pos.copy()
        env.step(np.zeros(2))
        np.testing.assert_allclose(env.pos, p0 + env.dt * env.vel, atol=1e-15)
        speeds = []
        for _ in range(50):
            env.step(np.zeros(2))
            speeds.append(np.linalg.norm(env.vel))
        assert np.ptp(speeds) <= 1e-12

    def test_unit_mass_closed_form(self):
        env = self.open_env(mass=1.0, dt=0.1, start=(0.0, 0.0), goal=(50.0, 50.0))
        env.step(np.array([1.0, 0.0]))
        np.testing.assert_allclose(env.vel, [0.1, 0.0], atol=1e-15)
        np.testing.assert_allclose(env.pos, [0.01, 0.0], atol=1e-15)

    def test_wall_crash_latch_is_absorbing(self):
        env = PointMassEnv(obstacle_grid=0, arena_halfwidth=0.5,
                           start=(0.4, 0.0), goal=(0.0, 0.0))
        for _ in range(100):
            env.step(np.array([10.0, 0.0]))
        assert env.crashed
        frozen = env.pos.copy()
        for _ in range(10):
            env.step(np.array([-10.0, 0.0]))
        np.testing.assert_array_equal(env.pos, frozen)

    def test_running_cost_plug_in(self):
        goal = np.zeros(2)
        assert pointmass_running_cost(np.zeros(2), np.zeros(2), np.zeros(2),
                                      goal, False) == 0.0
        val = pointmass_running_cost(np.array([1.0, 0.0]), np.array([2.0, 0.0]),
                                     np.array([1.0, 1.0]), goal, False)
        assert val == pytest.approx(0.5 + 1.0 + 0.4)
        assert pointmass_running_cost(np.zeros(2), np.zeros(2), np.zeros(2),
                                      goal, True) >= 1e6

    def test_terminal_cost(self):
        assert pointmass_terminal_cost(np.zeros(2), np.zeros(2), np.zeros(2)) == 0.0
        v = pointmass_terminal_cost(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                                    np.zeros(2))
        assert v == pytest.approx(1000.0 + 0.1)

    def test_batch_rollout_matches_stepwise(self):
        rng = np.random.default_rng(1)
        env = PointMassEnv()
        controls = rng.normal(scale=5.0, size=(1, 12, 2))
        batch_cost, batch_crash = env.rollout_costs(env.pos, env.vel, controls)

        sim = env.clone()
        total = 0.0
        for t in range(12):
            pre_crashed = sim.crashed
            sim.step(controls[0, t])
            hit = sim.crashed and not pre_crashed
            u = np.clip(controls[0, t], -sim.u_max, sim.u_max)
            total += pointmass_running_cost(sim.pos, sim.vel, u,
                                            np.asarray(sim.goal), hit)
        total += pointmass_terminal_cost(sim.pos, sim.vel, np.asarray(sim.goal))
        assert batch_cost[0] == pytest.approx(total, rel=1e-12)
        assert batch_crash[0] == sim.crashed

    def test_env_json_roundtrip(self):
        env = PointMassEnv(mass=3.0, obstacle_grid=2)
        clone = PointMassEnv.from_json(env.to_json())
        assert clone.mass == 3.0 and clone.obstacle_grid == 2
        np.testing.assert_array_equal(clone.obstacles, env.obstacles)


class TestArm:
    def test_fk_cases(self):
        arm = PlanarArm(lengths=[1.0, 1.0])
        np.testing.assert_allclose(arm.fk(np.zeros(2)), [[1, 0], [2, 0]], atol=1e-15)
        np.testing.assert_allclose(arm.fk(np.array([np.pi / 2, 0.0])),
                                   [[0, 1], [0, 2]], atol=1e-12)
        np.testing.assert_allclose(arm.fk(np.array([np.pi / 2, -np.pi / 2])),
                                   [[0, 1], [1, 1]], atol=1e-12)

    def test_chain_consistency_dropping_last_link(self):
        rng = np.random.default_rng(2)
        long = PlanarArm(lengths=[1.0, 0.8, 0.6])
        short = PlanarArm(lengths=[1.0, 0.8])
        q = rng.uniform(-np.pi, np.pi, 3)
        np.testing.assert_allclose(long.fk(q)[:2], short.fk(q[:2]), atol=1e-12)

    def test_pull_gradient_zero(self):
        arm = PlanarArm(lengths=[1.0, 1.0])
        g = pull_gradient(arm, np.zeros(2), np.zeros((2, 2)))
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_pull_gradient_single_link(self):
        arm = PlanarArm(lengths=[1.5])
        g = pull_gradient(arm, np.zeros(1), np.array([[0.0, 1.0]]))
        assert g[0] == pytest.approx(1.5, abs=1e-12)

    def test_pull_gradient_matches_composition_fd(self):
        rng = np.random.default_rng(3)
        arm = PlanarArm(lengths=[1.0, 0.7, 0.5])
        target = rng.normal(size=2)

        def scalar_cost(q):
            pts = arm.fk(q)
            return float(np.sum((pts - target) ** 2))

        for _ in range(10):
            q = rng.uniform(-2.0, 2.0, 3)
            pts = arm.fk(q)
            wgrads = 2.0 * (pts - target)
            got = pull_gradient(arm, q, wgrads)
            h = 1e-6
            fd = np.array([
                (scalar_cost(q + h * e) - scalar_cost(q - h * e)) / (2 * h)
                for e in np.eye(3)])
            np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-7)

    def test_dyn_cost_cases(self):
        cost, grad = dyn_cost(np.zeros((4, 2)), np.ones(2))
        assert cost == 0.0 and np.all(grad == 0)
        cost, _ = dyn_cost(np.array([[0.0], [1.0], [3.0]]), np.ones(1))
        assert cost == pytest.approx(3.0)
        base, _ = dyn_cost(np.array([[0.0, 0.0], [0.5, 1.0]]), np.array([1.0, 0.7]))
        double, _ = dyn_cost(np.array([[0.0, 0.0], [1.0, 2.0]]), np.array([1.0, 0.7]))
        assert double == pytest.approx(2 * base)

    def test_single_link_arc_length(self):
        arm = PlanarArm(lengths=[1.3])
        dq = 1.1
        configs = np.linspace(0.0, dq, 64)[:, None]
        c_len, _ = end_effector_length_cost(arm, configs)
        assert abs(c_len - 1.3 * dq) <= 0.01 * 1.3 * dq

    def test_zero_trajectory_zero_cost(self):
        arm = PlanarArm(lengths=[1.0, 0.8])
        traj = SplineTrajectory.uniform([0.3, 0.3], [0.3, 0.3],
                                        np.tile([0.3, 0.3], (2, 1)))
        cost, grad = arm_total_cost(arm, OccupancyField.empty(), traj, n_points=32)
        assert cost == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_self_collision_active_and_fd(self):
        arm = PlanarArm(lengths=[1.0, 1.0, 1.0])
        q = np.array([0.0, np.pi - 0.05, -(np.pi - 0.05) + 0.15])
        cost, grad = self_collision_cost(arm, q[None, :], clearance=0.12)
        assert cost > 0
        h = 1e-6
        for j in range(3):
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            fd = (self_collision_cost(arm, qp[None, :], 0.12)[0]
                  - self_collision_cost(arm, qm[None, :], 0.12)[0]) / (2 * h)
            assert grad[0, j] == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_two_link_arm_has_no_self_collision_term(self):
        arm = PlanarArm(lengths=[1.0, 1.0])
        cost, grad = self_collision_cost(arm, np.zeros((3, 2)))
        assert cost == 0.0 and np.all(grad == 0)

    def test_total_cost_gradient_matches_fd(self):
        rng = np.random.default_rng(4)
        arm = PlanarArm(lengths=[1.0, 0.8])
        occ = OccupancyField(centers=np.array([[1.0, 0.8], [0.4, -0.6]]),
                             stds=np.array([0.3, 0.25]))
        for _ in range(5):
            start = rng.uniform(-1.0, 1.0, 2)
            goal = rng.uniform(-1.0, 1.0, 2)
            inter = rng.uniform(-1.0, 1.0, (3, 2))
            traj = SplineTrajectory.uniform(start, goal, inter)
            _, grad = arm_total_cost(arm, occ, traj, n_points=24)
            flat = inter.ravel()
            h = 1e-6
            for k in range(flat.size):
                fp, fm = flat.copy(), flat.copy()
                fp[k] += h
                fm[k] -= h
                cp, _ = arm_total_cost(arm, occ, SplineTrajectory.uniform(
                    start, goal, fp.reshape(3, 2)), n_points=24)
                cm, _ = arm_total_cost(arm, occ, SplineTrajectory.uniform(
                    start, goal, fm.reshape(3, 2)), n_points=24)
                fd = (cp - cm) / (2 * h)
                assert grad.ravel()[k] == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_occupancy_cost_gradient_fd(self):
        rng = np.random.default_rng(5)
        arm = PlanarArm(lengths=[1.0, 0.7])
        occ = OccupancyField(centers=np.array([[0.8, 0.5]]), stds=np.array([0.4]))
        q = rng.uniform(-1.5, 1.5, 2)
        _, grad = occupancy_cost(arm, occ, q[None, :])
        h = 1e-6
        for j in range(2):
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            fd = (occupancy_cost(arm, occ, qp[None, :])[0]
                  - occupancy_cost(arm, occ, qm[None, :])[0]) / (2 * h)
            assert grad[0, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)
