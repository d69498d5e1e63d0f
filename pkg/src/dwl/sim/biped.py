"""Batched sagittal-plane biped: trunk plus two hip-knee-ankle legs.

Generalised coordinates per environment are
``q = [x, z, pitch, hipL, kneeL, ankleL, hipR, kneeR, ankleR]`` where
``(x, z)`` is the pelvis (hip joint) position. A body angle ``phi``
rotates body-frame offsets ``(bx, bz)`` into the world as
``(bx cos phi + bz sin phi, -bx sin phi + bz cos phi)``; positive pitch leans
the trunk forward.

Dynamics are assembled from per-body point Jacobians (Kane's equations for
planar bodies) and integrated with semi-implicit Euler. Joint PD, joint
limit springs and the spring-damper contact are linearised and folded into
the velocity solve, which keeps 2 ms steps stable with stiff gains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .terrain import TerrainProfile, terrain_height_scan

NQ = 9
NJ = 6
GRAVITY = 9.81
MAX_SPEED = 100.0

# Rows of the body-angle map: trunk, thigh L, shank L, foot L, thigh R, shank R, foot R.
ANGLE_MAP = np.array(
    [
        [0, 0, 1, 0, 0, 0, 0, 0, 0],
        [0, 0, 1, 1, 0, 0, 0, 0, 0],
        [0, 0, 1, 1, 1, 0, 0, 0, 0],
        [0, 0, 1, 1, 1, 1, 0, 0, 0],
        [0, 0, 1, 0, 0, 0, 1, 0, 0],
        [0, 0, 1, 0, 0, 0, 1, 1, 0],
        [0, 0, 1, 0, 0, 0, 1, 1, 1],
    ],
    dtype=float,
)


@dataclass
class RobotModel:
    trunk_mass: float = 26.0
    trunk_inertia: float = 0.6
    trunk_com_height: float = 0.15
    trunk_com_x: float | None = None  # None: place over the ankles in the nominal pose
    thigh_length: float = 0.33
    shank_length: float = 0.33
    thigh_mass: float = 3.0
    shank_mass: float = 2.0
    foot_mass: float = 1.0
    thigh_inertia: float = 0.03
    shank_inertia: float = 0.02
    foot_inertia: float = 0.004
    ankle_height: float = 0.05
    heel: float = 0.06
    toe: float = 0.14
    foot_com: tuple[float, float] = (0.04, -0.03)
    # Per leg joint (hip, knee, ankle); mirrored for both legs.
    armature: tuple[float, float, float] = (0.04, 0.04, 0.01)
    joint_lower: tuple[float, float, float] = (-1.6, -0.05, -0.9)
    joint_upper: tuple[float, float, float] = (1.2, 2.4, 0.9)
    torque_limit: tuple[float, float, float] = (250.0, 250.0, 36.0)
    kp: tuple[float, float, float] = (200.0, 200.0, 20.0)
    kd: tuple[float, float, float] = (6.0, 6.0, 5.0)
    contact_stiffness: float = 4.0e4
    contact_damping: float = 1.5e3
    friction_damping: float = 3.0e3
    limit_stiffness: float = 500.0
    limit_damping: float = 10.0
    reference_mass: float = 38.0  # mass of the robot the payload range was written for

    def __post_init__(self):
        for name in ("trunk_mass", "trunk_inertia", "thigh_length", "shank_length", "thigh_mass",
                     "shank_mass", "foot_mass", "thigh_inertia", "shank_inertia", "foot_inertia"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if any(lo >= hi for lo, hi in zip(self.joint_lower, self.joint_upper)):
            raise ValueError("joint limits must be ordered")

    @property
    def total_mass(self) -> float:
        return self.trunk_mass + 2 * (self.thigh_mass + self.shank_mass + self.foot_mass)

    @property
    def payload_scale(self) -> float:
        return self.total_mass / self.reference_mass

    def per_joint(self, triple) -> np.ndarray:
        return np.array(list(triple) * 2, dtype=float)


def pd_torque(target, theta, theta_dot, kp, kd, strength=1.0, offsets=0.0, limits=np.inf):
    """``strength * (kp * (target + offset - theta) - kd * theta_dot)``, clamped."""
    strength = np.asarray(strength, dtype=float)
    if strength.ndim > 0:
        strength = strength[..., None]
    err = np.asarray(target, dtype=float) + offsets - np.asarray(theta, dtype=float)
    tau = strength * (kp * err - kd * np.asarray(theta_dot, dtype=float))
    limits = np.asarray(limits, dtype=float)
    return np.clip(tau, -limits, limits)


@dataclass
class SimState:
    """Snapshot of every mutable simulator quantity (for replay and tests)."""

    q: np.ndarray
    v: np.ndarray
    target_history: np.ndarray
    push_wrench: np.ndarray
    push_remaining: np.ndarray
    last_forces: np.ndarray
    last_contact: np.ndarray
    last_torque: np.ndarray

    def copy(self) -> "SimState":
        return SimState(*(np.array(getattr(self, f)) for f in self.__dataclass_fields__))


@dataclass
class DynamicsArrays:
    """Per-environment randomized dynamics, one row per environment."""

    friction: np.ndarray
    motor_offset: np.ndarray
    motor_strength: np.ndarray
    payload: np.ndarray
    kp_factor: np.ndarray
    kd_factor: np.ndarray
    delay_steps: np.ndarray

    @classmethod
    def nominal(cls, n: int) -> "DynamicsArrays":
        return cls(np.ones(n), np.zeros((n, NJ)), np.ones(n), np.zeros(n), np.ones(n),
                   np.ones(n), np.zeros(n, dtype=int))


@dataclass
class Kinematics:
    com_pos: np.ndarray      # (N, 7, 2)
    com_jac: np.ndarray      # (N, 7, 2, 9)
    com_bias: np.ndarray     # (N, 7, 2) Jdot qdot
    contact_pos: np.ndarray  # (N, 4, 2) heel L, toe L, heel R, toe R
    contact_jac: np.ndarray  # (N, 4, 2, 9)
    sole_pos: np.ndarray     # (N, 2, 2)
    sole_jac: np.ndarray     # (N, 2, 2, 9)
    sole_bias: np.ndarray    # (N, 2, 2)


class PlanarBiped:
    """``n`` independent bipeds stepped together on a shared terrain."""

    def __init__(self, n: int, model: RobotModel | None = None,
                 terrain: TerrainProfile | None = None, dt: float = 0.002, substeps: int = 5,
                 max_delay_steps: int = 5, gravity: float = GRAVITY):
        self.n = n
        self.model = model or RobotModel()
        self.terrain = terrain or TerrainProfile()
        self.dt = dt
        self.substeps = substeps
        self.gravity = gravity
        self.max_delay_steps = max_delay_steps
        m = self.model
        self.kp = m.per_joint(m.kp)
        self.kd = m.per_joint(m.kd)
        self.torque_limit = m.per_joint(m.torque_limit)
        self.lower = m.per_joint(m.joint_lower)
        self.upper = m.per_joint(m.joint_upper)
        self.dynamics = DynamicsArrays.nominal(n)
        self.nominal_pose = np.array([-0.2, 0.4, -0.2, -0.2, 0.4, -0.2])
        self._trunk_com_x = m.trunk_com_x if m.trunk_com_x is not None else 0.0
        if m.trunk_com_x is None:
            self._trunk_com_x = self._balanced_trunk_com_x(self.nominal_pose)
        self._const_inertia = self._rotational_inertia()
        self.state = SimState(
            q=np.zeros((n, NQ)), v=np.zeros((n, NQ)),
            target_history=np.zeros((n, max_delay_steps + 1, NJ)),
            push_wrench=np.zeros((n, 3)), push_remaining=np.zeros(n),
            last_forces=np.zeros((n, 4)), last_contact=np.zeros((n, 4), dtype=bool),
            last_torque=np.zeros((n, NJ)),
        )
        self.set_pose(np.arange(n), self.nominal_pose[None, :].repeat(n, 0))

    # -- model quantities ----------------------------------------------------

    def set_nominal_pose(self, pose) -> None:
        self.nominal_pose = np.asarray(pose, dtype=float)
        if self.model.trunk_com_x is None:
            self._trunk_com_x = self._balanced_trunk_com_x(self.nominal_pose)

    def _masses(self) -> np.ndarray:
        m = self.model
        base = np.array([m.trunk_mass, m.thigh_mass, m.shank_mass, m.foot_mass,
                         m.thigh_mass, m.shank_mass, m.foot_mass])
        masses = np.tile(base, (self.n, 1))
        masses[:, 0] += self.dynamics.payload
        return masses

    def _rotational_inertia(self) -> np.ndarray:
        m = self.model
        inertia = np.array([m.trunk_inertia, m.thigh_inertia, m.shank_inertia, m.foot_inertia,
                            m.thigh_inertia, m.shank_inertia, m.foot_inertia])
        out = np.einsum("b,bi,bj->ij", inertia, ANGLE_MAP, ANGLE_MAP)
        out[3:, 3:] += np.diag(m.per_joint(m.armature))
        return out

    def _balanced_trunk_com_x(self, pose) -> float:
        """Trunk COM offset that puts the whole-body COM over the ankle midpoint."""
        q = np.zeros((1, NQ))
        q[0, 3:] = pose
        saved = self._trunk_com_x
        self._trunk_com_x = 0.0
        kin = self.kinematics(q, np.zeros((1, NQ)))
        self._trunk_com_x = saved
        m = self.model
        masses = np.array([0.0, m.thigh_mass, m.shank_mass, m.foot_mass,
                           m.thigh_mass, m.shank_mass, m.foot_mass])
        sole_x = kin.sole_pos[0, :, 0].mean()
        legs_moment = np.sum(masses * (kin.com_pos[0, :, 0] - sole_x))
        return float(sole_x - legs_moment / m.trunk_mass)

    # -- kinematics ----------------------------------------------------------

    def _segment_table(self):
        key = self._trunk_com_x
        if getattr(self, "_table_key", None) != key:
            self._table = self._build_segment_table()
            self._table_key = key
        return self._table

    def _build_segment_table(self):
        """Body-frame segments ``(link, bx, bz)`` and the point membership matrix.

        Points are ordered as 7 body COMs (ANGLE_MAP rows), then heel L, toe L,
        heel R, toe R, then sole L, sole R.
        """
        m = self.model
        segs = [(0, self._trunk_com_x, m.trunk_com_height)]
        sole_bx = (m.toe - m.heel) / 2.0
        rows = {"trunk": [0]}
        for side, (thigh, shank, foot) in (("L", (1, 2, 3)), ("R", (4, 5, 6))):
            base = len(segs)
            segs += [
                (thigh, 0.0, -m.thigh_length / 2), (thigh, 0.0, -m.thigh_length),
                (shank, 0.0, -m.shank_length / 2), (shank, 0.0, -m.shank_length),
                (foot, *m.foot_com), (foot, -m.heel, -m.ankle_height),
                (foot, m.toe, -m.ankle_height), (foot, sole_bx, -m.ankle_height),
            ]
            th_half, knee, sh_half, ankle, fcom, heel, toe, sole = range(base, base + 8)
            rows["thigh" + side] = [th_half]
            rows["shank" + side] = [knee, sh_half]
            rows["foot" + side] = [knee, ankle, fcom]
            rows["heel" + side] = [knee, ankle, heel]
            rows["toe" + side] = [knee, ankle, toe]
            rows["sole" + side] = [knee, ankle, sole]
        order = ["trunk", "thighL", "shankL", "footL", "thighR", "shankR", "footR",
                 "heelL", "toeL", "heelR", "toeR", "soleL", "soleR"]
        member = np.zeros((len(order), len(segs)))
        for i, name in enumerate(order):
            member[i, rows[name]] = 1.0
        table = np.array(segs, dtype=float)
        return table[:, 0].astype(int), table[:, 1], table[:, 2], member

    def kinematics(self, q: np.ndarray, v: np.ndarray) -> Kinematics:
        links, bx, bz, member = self._segment_table()
        n = q.shape[0]
        phi = (q @ ANGLE_MAP.T)[:, links]
        omega = (v @ ANGLE_MAP.T)[:, links]
        s, c = np.sin(phi), np.cos(phi)
        w = np.stack([bx * c + bz * s, -bx * s + bz * c], -1)          # (N, S, 2)
        perp = np.stack([w[..., 1], -w[..., 0]], -1)
        seg_jac = perp[..., None] * ANGLE_MAP[links][None, :, None, :]  # (N, S, 2, 9)
        pos = q[:, None, :2] + np.einsum("ps,nsk->npk", member, w)
        jac = np.einsum("ps,nski->npki", member, seg_jac)
        jac[:, :, 0, 0] += 1.0
        jac[:, :, 1, 1] += 1.0
        bias = -np.einsum("ps,nsk->npk", member, (omega ** 2)[..., None] * w)
        return Kinematics(
            com_pos=pos[:, :7], com_jac=jac[:, :7], com_bias=bias[:, :7],
            contact_pos=pos[:, 7:11], contact_jac=jac[:, 7:11],
            sole_pos=pos[:, 11:], sole_jac=jac[:, 11:], sole_bias=bias[:, 11:],
        )

    def mass_matrix(self, kin: Kinematics) -> np.ndarray:
        masses = self._masses()
        return (np.einsum("nb,nbki,nbkj->nij", masses, kin.com_jac, kin.com_jac)
                + self._const_inertia[None])

    def energy(self, q=None, v=None) -> np.ndarray:
        """Kinetic plus gravitational potential energy per environment."""
        q = self.state.q if q is None else q
        v = self.state.v if v is None else v
        kin = self.kinematics(q, v)
        M = self.mass_matrix(kin)
        ke = 0.5 * np.einsum("ni,nij,nj->n", v, M, v)
        pe = self.gravity * np.sum(self._masses() * kin.com_pos[:, :, 1], axis=1)
        return ke + pe

    # -- state management ----------------------------------------------------

    def standing_height(self, pose) -> float:
        """Pelvis height that rests the lowest sole point on z = 0."""
        q = np.zeros((1, NQ))
        q[0, 3:] = pose
        kin = self.kinematics(q, np.zeros((1, NQ)))
        return float(-kin.contact_pos[0, :, 1].min())

    def set_pose(self, idx, joint_pos, base_x=None, pitch=None) -> None:
        """Place envs ``idx`` at rest in the given joint pose, feet on the terrain."""
        idx = np.atleast_1d(idx)
        k = len(idx)
        q = np.zeros((k, NQ))
        q[:, 3:] = joint_pos
        q[:, 0] = 0.0 if base_x is None else base_x
        q[:, 2] = 0.0 if pitch is None else pitch
        kin = self.kinematics(q, np.zeros((k, NQ)))
        ground = self.terrain.height(kin.contact_pos[:, :, 0])
        q[:, 1] = np.max(ground - kin.contact_pos[:, :, 1], axis=1)
        st = self.state
        st.q[idx] = q
        st.v[idx] = 0.0
        st.target_history[idx] = np.asarray(joint_pos)[:, None, :]
        st.push_wrench[idx] = 0.0
        st.push_remaining[idx] = 0.0
        st.last_forces[idx] = 0.0
        st.last_contact[idx] = False
        st.last_torque[idx] = 0.0

    def get_state(self) -> SimState:
        return self.state.copy()

    def set_state(self, state: SimState) -> None:
        self.state = state.copy()

    def apply_push(self, idx, force, torque, duration: float) -> None:
        """Schedule a trunk wrench ``(fx, fz)``, ``torque`` for ``duration`` seconds."""
        if duration <= 0:
            raise ValueError("push duration must be positive")
        idx = np.atleast_1d(idx)
        force = np.broadcast_to(np.asarray(force, dtype=float), (len(idx), 2))
        self.state.push_wrench[idx, :2] = force
        self.state.push_wrench[idx, 2] = torque
        self.state.push_remaining[idx] = duration

    # -- dynamics ------------------------------------------------------------

    def _substep(self, target: np.ndarray) -> None:
        st, m, dyn = self.state, self.model, self.dynamics
        n, dt = self.n, self.dt
        q, v = st.q, st.v
        kin = self.kinematics(q, v)
        masses = self._masses()
        M = self.mass_matrix(kin)
        grav = np.array([0.0, -self.gravity])
        f = np.einsum("nb,nbki,k->ni", masses, kin.com_jac, grav)
        f -= np.einsum("nb,nbki,nbk->ni", masses, kin.com_jac, kin.com_bias)
        K = np.zeros((n, NQ, NQ))
        D = np.zeros((n, NQ, NQ))
        jidx = np.arange(3, NQ)

        # Joint PD with delay, offsets, gain and strength randomization.
        st.target_history[:, :-1] = st.target_history[:, 1:]
        st.target_history[:, -1] = target
        lag = np.clip(dyn.delay_steps, 0, self.max_delay_steps)
        applied = st.target_history[np.arange(n), -1 - lag]
        theta, theta_dot = q[:, 3:], v[:, 3:]
        strength = dyn.motor_strength[:, None]
        kp = self.kp[None] * dyn.kp_factor[:, None] * strength
        kd = self.kd[None] * dyn.kd_factor[:, None] * strength
        raw = kp * (applied + dyn.motor_offset - theta) - kd * theta_dot
        tau = np.clip(raw, -self.torque_limit, self.torque_limit)
        free = np.abs(raw) < self.torque_limit
        K[:, jidx, jidx] += kp * free
        D[:, jidx, jidx] += kd * free
        f[:, 3:] += tau
        st.last_torque = tau

        # Soft joint limits.
        below, above = theta < self.lower, theta > self.upper
        out = below | above
        bound = np.where(below, self.lower, self.upper)
        f[:, 3:] += out * (m.limit_stiffness * (bound - theta) - m.limit_damping * theta_dot)
        K[:, jidx, jidx] += out * m.limit_stiffness
        D[:, jidx, jidx] += out * m.limit_damping

        # Penalty contact with a Coulomb cap on viscous friction.
        px, pz = kin.contact_pos[..., 0], kin.contact_pos[..., 1]
        h, dh = self.terrain.height_and_slope(px)
        scale = 1.0 / np.sqrt(1.0 + dh * dh)
        normal = np.stack([-dh * scale, scale], -1)
        tangent = np.stack([scale, dh * scale], -1)
        depth = (h - pz) * scale
        vel = np.einsum("npki,ni->npk", kin.contact_jac, v)
        vn = np.sum(vel * normal, -1)
        vt = np.sum(vel * tangent, -1)
        touching = depth > 0
        fn_raw = m.contact_stiffness * depth - m.contact_damping * vn
        pressing = touching & (fn_raw > 0)
        fn = np.where(pressing, fn_raw, 0.0)
        cap = dyn.friction[:, None] * fn
        ft_raw = -m.friction_damping * vt
        ft = np.clip(ft_raw, -cap, cap)
        sticking = pressing & (np.abs(ft_raw) < cap)
        force = fn[..., None] * normal + ft[..., None] * tangent
        f += np.einsum("npki,npk->ni", kin.contact_jac, force)
        jn = np.einsum("npk,npki->npi", normal, kin.contact_jac)
        jt = np.einsum("npk,npki->npi", tangent, kin.contact_jac)
        K += m.contact_stiffness * np.einsum("np,npi,npj->nij", touching & pressing, jn, jn)
        D += m.contact_damping * np.einsum("np,npi,npj->nij", pressing, jn, jn)
        D += m.friction_damping * np.einsum("np,npi,npj->nij", sticking, jt, jt)
        st.last_forces = fn
        st.last_contact = touching

        # External push on the trunk COM.
        pushing = st.push_remaining > 0
        if np.any(pushing):
            wrench = st.push_wrench * pushing[:, None]
            f += np.einsum("nki,nk->ni", kin.com_jac[:, 0], wrench[:, :2])
            f[:, 2] += wrench[:, 2]
            st.push_remaining = np.maximum(st.push_remaining - dt, 0.0)
            done = st.push_remaining <= 0
            st.push_wrench[done & pushing] = 0.0

        A = M + dt * D + dt * dt * K
        rhs = dt * (f - dt * np.einsum("nij,nj->ni", K, v))
        dv = np.linalg.solve(A, rhs[..., None])[..., 0]
        st.v = v + dv
        st.q = q + dt * st.v

    def step(self, target: np.ndarray) -> dict:
        """Advance one control period with joint position targets ``(N, 6)``.

        Returns mean foot normal forces over the period and any per-substep
        flags needed by the caller.
        """
        target = np.clip(target, self.lower, self.upper)
        force_sum = np.zeros((self.n, 4))
        for _ in range(self.substeps):
            self._substep(target)
            force_sum += self.state.last_forces
        return {"mean_contact_forces": force_sum / self.substeps}

    def diverged(self) -> np.ndarray:
        st = self.state
        finite = np.all(np.isfinite(st.q), 1) & np.all(np.isfinite(st.v), 1)
        return ~finite | (np.max(np.abs(np.nan_to_num(st.v, nan=1e9)), 1) > MAX_SPEED)

    # -- ground-truth readout -------------------------------------------------

    def base_height(self) -> np.ndarray:
        q = self.state.q
        return q[:, 1] - self.terrain.height(q[:, 0])

    def truth(self, scan_nx: int, scan_ny: int, scan_dx: float) -> dict[str, np.ndarray]:
        st = self.state
        q, v = st.q, st.v
        n = self.n
        kin = self.kinematics(q, v)
        zeros = np.zeros(n)
        sole_vel = np.einsum("nfki,ni->nfk", kin.sole_jac, v)
        feet_pos = np.zeros((n, 2, 3))
        feet_vel = np.zeros((n, 2, 3))
        feet_pos[..., 0] = kin.sole_pos[..., 0] - q[:, None, 0]
        feet_pos[..., 2] = kin.sole_pos[..., 1] - q[:, None, 1]
        feet_vel[..., 0] = sole_vel[..., 0]
        feet_vel[..., 2] = sole_vel[..., 1]
        forces = st.last_forces.reshape(n, 2, 2).sum(-1)
        contact = st.last_contact.reshape(n, 2, 2).any(-1).astype(float)
        push = np.zeros((n, 6))
        active = st.push_remaining > 0
        push[:, 0] = st.push_wrench[:, 0] * active
        push[:, 2] = st.push_wrench[:, 1] * active
        push[:, 4] = st.push_wrench[:, 2] * active
        sole_ground = self.terrain.height(kin.sole_pos[..., 0])
        return {
            "joint_pos": q[:, 3:].copy(),
            "joint_vel": v[:, 3:].copy(),
            "ang_vel": np.stack([zeros, v[:, 2], zeros], -1),
            "orientation": np.stack([zeros, q[:, 2], zeros], -1),
            "base_lin_vel": np.stack([v[:, 0], zeros, v[:, 1]], -1),
            "friction": self.dynamics.friction.copy(),
            "push_wrench": push,
            "feet_pos": feet_pos,
            "feet_vel": feet_vel,
            "feet_contact": contact,
            "body_mass": self.model.total_mass + self.dynamics.payload,
            "torques": st.last_torque.copy(),
            "height_scan": terrain_height_scan(q[:, 0], q[:, 1], self.terrain, scan_nx, scan_ny,
                                               scan_dx),
            # Extras used by rewards and termination.
            "base_x": q[:, 0].copy(),
            "base_height": q[:, 1] - self.terrain.height(q[:, 0]),
            "feet_height": kin.sole_pos[..., 1] - sole_ground,
            "feet_vel_z": sole_vel[..., 1],
            "feet_speed": np.linalg.norm(sole_vel, axis=-1),
            "contact_forces": forces,
        }
