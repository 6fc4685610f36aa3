"""Independent reference implementations used only by tests.

Each oracle deliberately takes a different computational route from the
library code it checks (matrix exponentials, RK4, brute-force sums), so
agreement is meaningful.
"""

import numpy as np

from rlvio.geometry import Quat
from rlvio.sim import TrajectorySpec, gen_trajectory


def quat_to_matrix_oracle(q: Quat) -> np.ndarray:
    """Rotation matrix via the outer-product form (not the library path)."""
    w = q.w
    v = np.array([q.x, q.y, q.z])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return (w * w - v @ v) * np.eye(3) + 2.0 * np.outer(v, v) + 2.0 * w * vx


def rodrigues_matrix(phi) -> np.ndarray:
    """Rotation matrix from axis-angle by the Rodrigues formula."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    k = np.array([[0, -phi[2], phi[1]], [phi[2], 0, -phi[0]], [-phi[1], phi[0], 0]])
    if theta < 1e-12:
        return np.eye(3) + k + 0.5 * k @ k
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * k @ k


def so3_exp_series(phi, terms: int = 24) -> np.ndarray:
    """Matrix exponential of the hat map by truncated Taylor series."""
    phi = np.asarray(phi, dtype=float)
    k = np.array([[0, -phi[2], phi[1]], [phi[2], 0, -phi[0]], [-phi[1], phi[0], 0]])
    out = np.eye(3)
    term = np.eye(3)
    for n in range(1, terms):
        term = term @ k / n
        out = out + term
    return out


def rk4_strapdown(
    spec: TrajectorySpec,
    t0: float,
    t1: float,
    steps: int,
    p0,
    v0,
    q0: np.ndarray,
    gravity,
):
    """High-rate RK4 integration of the continuous kinematics.

    State is (p, v, q as wxyz array); body rates and world accel come
    from the analytic trajectory. Independent of the discrete
    pre-integration code path.
    """
    gravity = np.asarray(gravity, dtype=float)

    def omega_at(t):
        return gen_trajectory(spec, t)[4]

    def accel_at(t):
        return gen_trajectory(spec, t)[2]

    def qdot(q, w):
        om = np.array(
            [
                [0.0, -w[0], -w[1], -w[2]],
                [w[0], 0.0, w[2], -w[1]],
                [w[1], -w[2], 0.0, w[0]],
                [w[2], w[1], -w[0], 0.0],
            ]
        )
        return 0.5 * om @ q

    h = (t1 - t0) / steps
    p = np.asarray(p0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    q = np.asarray(q0, dtype=float).copy()
    t = t0
    for _ in range(steps):
        # derivatives of (p, v, q); gravity cancels because accel_at is
        # the true world acceleration already
        def deriv(state, tau):
            pp, vv, qq = state
            return (vv, accel_at(tau), qdot(qq, omega_at(tau)))

        s1 = deriv((p, v, q), t)
        s2 = deriv((p + 0.5 * h * s1[0], v + 0.5 * h * s1[1], q + 0.5 * h * s1[2]), t + 0.5 * h)
        s3 = deriv((p + 0.5 * h * s2[0], v + 0.5 * h * s2[1], q + 0.5 * h * s2[2]), t + 0.5 * h)
        s4 = deriv((p + h * s3[0], v + h * s3[1], q + h * s3[2]), t + h)
        p = p + h / 6.0 * (s1[0] + 2 * s2[0] + 2 * s3[0] + s4[0])
        v = v + h / 6.0 * (s1[1] + 2 * s2[1] + 2 * s3[1] + s4[1])
        q = q + h / 6.0 * (s1[2] + 2 * s2[2] + 2 * s3[2] + s4[2])
        q = q / np.linalg.norm(q)
        t += h
    return p, v, q


def rk4_strapdown_batch(specs, t1: float, steps: int, starts, gravity, chunk: int = 8000):
    """Batched high-rate RK4 over many trajectory specs at once.

    Same math as rk4_strapdown but advancing all segments together so a
    hundred 5-second segments at 20 kHz stay inside the time budget.
    ``starts`` is a list of (p0, v0, q0_wxyz). Returns arrays (N,3),
    (N,3), (N,4).
    """
    from rlvio.sim import _angles, _body_rates, _pos_vel_acc

    n = len(specs)
    h = t1 / steps
    p = np.array([s[0] for s in starts], dtype=float)
    v = np.array([s[1] for s in starts], dtype=float)
    q = np.array([s[2] for s in starts], dtype=float)

    def signals(spec, ts):
        _, _, acc = _pos_vel_acc(spec, ts)
        yaw, yr, pitch, pr = _angles(spec, ts)
        return acc, _body_rates(yr, pitch, pr)

    def qdot(qb, wb):
        w0, x0, y0, z0 = qb[:, 0], qb[:, 1], qb[:, 2], qb[:, 3]
        wx, wy, wz = wb[:, 0], wb[:, 1], wb[:, 2]
        return 0.5 * np.stack(
            [
                -wx * x0 - wy * y0 - wz * z0,
                wx * w0 + wz * y0 - wy * z0,
                wy * w0 - wz * x0 + wx * z0,
                wz * w0 + wy * x0 - wx * y0,
            ],
            axis=1,
        )

    done = 0
    while done < steps:
        m = min(chunk, steps - done)
        ts = done * h + np.arange(m) * h
        # acc/omega at t, t + h/2, t + h for every segment of this chunk
        acc = np.empty((3, n, m, 3))
        om = np.empty((3, n, m, 3))
        for i, spec in enumerate(specs):
            for j, off in enumerate((0.0, 0.5 * h, h)):
                a_j, w_j = signals(spec, ts + off)
                acc[j, i] = a_j
                om[j, i] = w_j
        h2_6 = h * h / 6.0
        h_6 = h / 6.0
        for k in range(m):
            a0, am, a1 = acc[0, :, k], acc[1, :, k], acc[2, :, k]
            w0, wm, w1 = om[0, :, k], om[1, :, k], om[2, :, k]
            # p and v stages collapse to closed Simpson-like sums
            p = p + h * v + h2_6 * (a0 + 2.0 * am)
            v = v + h_6 * (a0 + 4.0 * am + a1)
            k1q = qdot(q, w0)
            k2q = qdot(q + 0.5 * h * k1q, wm)
            k3q = qdot(q + 0.5 * h * k2q, wm)
            k4q = qdot(q + h * k3q, w1)
            q = q + h_6 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
            if k % 32 == 0:
                q = q / np.linalg.norm(q, axis=1, keepdims=True)
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        done += m
    return p, v, q


def gae_bruteforce(rewards, values, gamma, lam):
    """GAE as the explicit double sum over future TD errors."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    t_len = len(rewards)
    deltas = rewards + gamma * values[1:] - values[:-1]
    adv = np.zeros(t_len)
    for t in range(t_len):
        for k in range(t, t_len):
            adv[t] += (gamma * lam) ** (k - t) * deltas[k]
    return adv, adv + values[:-1]


def mlp_forward_oracle(params, x):
    """Duplicate forward pass written independently of rlvio.mlp."""
    h = np.asarray(x, dtype=float)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = w @ h + b
        if act == "tanh":
            h = np.tanh(z)
        elif act == "relu":
            h = np.where(z > 0, z, 0.0)
        elif act == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-z))
        else:
            h = z
    return h
