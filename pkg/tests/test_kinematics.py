import numpy as np
import pytest

from granusim.kinematics import (
    ChainLink,
    ChainLinkDriver,
    KinematicChain,
    ScriptedDriver,
    SpinDriver,
    StaticDriver,
    TrackSteeringDriver,
    TrackSteeringState,
    identity_pose,
    make_pose,
    reorthonormalize,
    rotation_error,
    se3_compose,
    se3_exp,
    se3_inverse,
    skew,
    so3_exp,
    so3_log,
    track_steering_advance,
)


class TestSO3:
    def test_exp_zero_is_identity(self):
        assert np.allclose(so3_exp(np.zeros(3)), np.eye(3))

    def test_exp_quarter_turn_z(self):
        R = so3_exp(np.array([0.0, 0.0, np.pi / 2]))
        assert np.allclose(R @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            w = rng.normal(size=3)
            w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
            assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)

    def test_exp_is_rotation(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            R = so3_exp(rng.normal(size=3))
            assert rotation_error(R) < 1e-12
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_skew_cross_product(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([-0.5, 0.4, 2.0])
        assert np.allclose(skew(a) @ b, np.cross(a, b))

    def test_reorthonormalize(self):
        R = so3_exp(np.array([0.3, 0.1, -0.2]))
        noisy = R + 1e-4 * np.arange(9).reshape(3, 3)
        fixed = reorthonormalize(noisy)
        assert rotation_error(fixed) < 1e-12
        assert np.abs(fixed - R).max() < 1e-3


class TestSE3:
    def test_compose_inverse(self):
        rng = np.random.default_rng(7)
        T = make_pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))
        assert np.allclose(se3_compose(T, se3_inverse(T)), np.eye(4), atol=1e-12)

    def test_se3_exp_pure_translation(self):
        T = se3_exp(np.array([0.0, 0, 0, 1.0, 2.0, 3.0]), dt=0.5)
        assert np.allclose(T[:3, :3], np.eye(3))
        assert np.allclose(T[:3, 3], [0.5, 1.0, 1.5])

    def test_se3_exp_screw_motion(self):
        # rotation about z with unit forward velocity traces a circular arc
        T = se3_exp(np.array([0.0, 0, np.pi / 2, 1.0, 0, 0]), dt=1.0)
        # chord of the arc of radius 2/pi after a quarter turn
        radius = 1.0 / (np.pi / 2)
        want = np.array([radius, radius, 0.0])
        assert np.allclose(T[:3, 3], want, atol=1e-12)


class TestDrivers:
    def test_static_driver(self):
        T = make_pose(np.eye(3), np.array([1.0, 2.0, 3.0]))
        d = StaticDriver(T)
        assert np.array_equal(d.pose_at(10.0), T)
        w, v = d.twist_at(10.0)
        assert not w.any() and not v.any()

    def test_spin_driver_pose_and_twist(self):
        center = np.array([1.0, 0.0, 0.0])
        d = SpinDriver(axis=np.array([0.0, 0, 1.0]), rate=2.0, center=center)
        T = d.pose_at(np.pi / 4)  # quarter turn at rate 2
        p = T[:3, :3] @ np.array([2.0, 0, 0]) + T[:3, 3]
        assert np.allclose(p, [1.0, 1.0, 0.0], atol=1e-12)  # rotated about center
        w, v0 = d.twist_at(0.0)
        assert np.allclose(w, [0, 0, 2.0])
        # origin sits at distance 1 from the center, so |v_origin| = rate * 1
        assert np.linalg.norm(v0) == pytest.approx(2.0, abs=1e-9)

    def test_scripted_driver_twist_by_differences(self):
        def sampler(t):
            return make_pose(so3_exp(np.array([0.0, 0, 0.7 * t])),
                             np.array([0.3 * t, 0.0, 0.1 * t * t]))

        d = ScriptedDriver(sampler)
        w, v = d.twist_at(2.0)
        assert np.allclose(w, [0, 0, 0.7], atol=1e-6)
        assert np.allclose(v, [0.3, 0.0, 0.4], atol=1e-6)


class TestTrackSteering:
    def test_straight_line(self):
        s = TrackSteeringState()
        for _ in range(10):
            s = track_steering_advance(s, np.array([1.0, 0.0]), 0.1, scale_v=2.0)
        assert s.x == pytest.approx(2.0)
        assert s.y == pytest.approx(0.0)
        assert s.theta == pytest.approx(0.0)

    def test_heading_updates_before_position(self):
        s = track_steering_advance(
            TrackSteeringState(), np.array([1.0, 1.0]), 1.0,
            scale_v=1.0, scale_omega=np.pi / 2,
        )
        # post-update heading is pi/2, so motion is along +y
        assert s.x == pytest.approx(0.0, abs=1e-12)
        assert s.y == pytest.approx(1.0)

    def test_action_clipping(self):
        s = track_steering_advance(TrackSteeringState(), np.array([5.0, 0.0]), 1.0)
        assert s.x == pytest.approx(1.0)

    def test_driver_pose_and_twist(self):
        d = TrackSteeringDriver(scale_v=2.0, scale_omega=1.0)
        d.command(np.array([1.0, 0.0]))
        d.advance(0.5)
        T = d.pose_at(0.0)
        assert np.allclose(T[:3, 3], [1.0, 0.0, 0.0])
        w, v = d.twist_at(0.0)
        assert np.allclose(v, [2.0, 0.0, 0.0])
        assert np.allclose(w, 0.0)


class TestChains:
    def test_single_revolute_pose(self):
        chain = KinematicChain([
            ChainLink(parent=-1, origin=identity_pose(), joint_type="revolute",
                      axis=np.array([0.0, 0, 1.0])),
        ])
        poses, _ = chain.fk(np.array([np.pi / 2]))
        assert np.allclose(poses[0][:3, :3] @ np.array([1.0, 0, 0]), [0, 1, 0],
                           atol=1e-12)

    def test_prismatic_translation(self):
        chain = KinematicChain([
            ChainLink(parent=-1, origin=identity_pose(), joint_type="prismatic",
                      axis=np.array([1.0, 0, 0])),
        ])
        poses, _ = chain.fk(np.array([0.3]))
        assert np.allclose(poses[0][:3, 3], [0.3, 0, 0])

    def test_two_link_arm_end_position(self):
        # planar 2R arm with unit links, angles (90, -90): elbow at (0,1),
        # end frame back to heading +x
        elbow_origin = make_pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        chain = KinematicChain([
            ChainLink(parent=-1, origin=identity_pose(), joint_type="revolute",
                      axis=np.array([0.0, 0, 1.0])),
            ChainLink(parent=0, origin=elbow_origin, joint_type="revolute",
                      axis=np.array([0.0, 0, 1.0])),
        ])
        poses, _ = chain.fk(np.array([np.pi / 2, -np.pi / 2]))
        assert np.allclose(poses[1][:3, 3], [0.0, 1.0, 0.0], atol=1e-12)
        assert np.allclose(poses[1][:3, :3], np.eye(3), atol=1e-12)

    def test_revolute_twist_matches_finite_difference(self):
        chain = KinematicChain([
            ChainLink(parent=-1, origin=make_pose(np.eye(3), np.array([0.5, 0, 0])),
                      joint_type="revolute", axis=np.array([0.0, 0, 1.0])),
        ])
        chain.q = np.array([0.3])
        chain.qd = np.array([1.7])
        poses, twists = chain.fk()
        w, v0 = twists[0]
        h = 1e-6
        pa, _ = chain.fk(chain.q - h * chain.qd)
        pb, _ = chain.fk(chain.q + h * chain.qd)
        v_num = (pb[0][:3, 3] - pa[0][:3, 3]) / (2 * h)
        assert np.allclose(w, [0, 0, 1.7], atol=1e-9)
        assert np.allclose(v0, v_num, atol=1e-6)

    def test_velocity_limits_enforced(self):
        chain = KinematicChain([
            ChainLink(parent=-1, origin=identity_pose(), joint_type="revolute",
                      axis=np.array([0.0, 0, 1.0]), velocity_limit=0.5),
        ])
        chain.advance(np.array([3.0]), dt=1.0)
        assert chain.q[0] == pytest.approx(0.5)
        assert chain.qd[0] == pytest.approx(0.5)

    def test_tree_ordering_validated(self):
        with pytest.raises(ValueError, match="precede"):
            KinematicChain([
                ChainLink(parent=0, origin=identity_pose(), joint_type="revolute",
                          axis=np.array([0.0, 0, 1.0])),
            ])

    def test_bad_joint_args(self):
        with pytest.raises(ValueError):
            ChainLink(parent=-1, origin=identity_pose(), joint_type="spherical",
                      axis=np.array([0.0, 0, 1.0]))
        with pytest.raises(ValueError):
            ChainLink(parent=-1, origin=identity_pose(), joint_type="revolute",
                      axis=np.zeros(3))

    def test_chain_link_driver(self):
        chain = KinematicChain([
            ChainLink(parent=-1, origin=identity_pose(), joint_type="prismatic",
                      axis=np.array([0.0, 0, 1.0])),
        ])
        d = ChainLinkDriver(chain=chain, link_index=0)
        chain.advance(np.array([2.0]), dt=0.25)
        assert np.allclose(d.pose_at(0.0)[:3, 3], [0, 0, 0.5])
        w, v = d.twist_at(0.0)
        assert np.allclose(v, [0, 0, 2.0])
