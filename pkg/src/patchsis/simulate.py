"""Trajectory generation: fixed-step RK4 for the deterministic dynamics and a
synchronous binomial/multinomial jump process for finite populations.

Stochastic draws come from counter-based Philox streams, one per
(replica, node, layer), derived as
``SeedSequence(entropy=seed, spawn_key=(replica, layer, node))`` so ensembles
parallelize deterministically and identical seeds reproduce trajectories
bit for bit.
"""

import concurrent.futures
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import StepTooCoarse, StepTooLarge
from .model import SystemState

OVERSHOOT_TOL = 1e-9
MASS_DRIFT_TOL = 1e-9
EVENT_PROBABILITY_CAP = 0.2


@dataclass
class Trajectory:
    """Sampled states: times (T,), fractions p (T, k), populations x (T, nm).

    Stochastic runs also carry integer susceptible/infected counts with the
    same layout.
    """

    times: np.ndarray
    p: np.ndarray
    x: np.ndarray
    n: int
    m: int
    metadata: dict = field(default_factory=dict)
    counts_s: np.ndarray = None
    counts_i: np.ndarray = None

    def final_state(self):
        return SystemState(self.p[-1].copy(), self.x[-1].copy(), float(self.times[-1]))

    def node_average(self):
        """Infected fraction of each node's total population, (T, n)."""
        xg = self.x.reshape(len(self.times), self.m, self.n)
        inf = (self.p.reshape(len(self.times), self.m, self.n) * xg).sum(axis=1)
        tot = xg.sum(axis=1)
        return np.where(tot > 0, inf / np.where(tot > 0, tot, 1.0), 0.0)

    def to_csv(self, path):
        """Write `t,node,layer,p,x` rows, time-major then layer then node,
        12 significant digits, 1-based node/layer labels.  A stochastic run
        prepends its seed as a `#` metadata line."""
        lines = []
        if "seed" in self.metadata:
            lines.append(f"# seed={self.metadata['seed']}")
        lines.append("t,node,layer,p,x")
        for k, t in enumerate(self.times):
            for a in range(self.m):
                for i in range(self.n):
                    c = a * self.n + i
                    lines.append(f"{t:.12g},{i + 1},{a + 1},"
                                 f"{self.p[k, c]:.12g},{self.x[k, c]:.12g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def integrate_ode(rhs, s0, t_end, step=0.01, store_every=1, d=None):
    """Classic fixed-step RK4 on (p, x) from state s0 to time s0.t + t_end.

    After each step p is clamped back into [0, 1] provided the overshoot is
    at most 1e-9; anything larger raises StepTooLarge.  When the dispersal
    `d` is supplied, the trajectory is labelled with its (n, m) and per-layer
    population drift beyond 1e-9 relative raises as well.  `store_every`
    thins the stored samples; the final state is always kept.
    """
    if step <= 0 or t_end < 0:
        raise ValueError("need step > 0 and t_end >= 0")
    p = np.array(s0.p, dtype=float)
    x = np.array(s0.x, dtype=float)
    t0 = float(s0.t)
    n_steps = int(np.ceil(round(t_end / step, 9))) if t_end > 0 else 0
    times = [t0]
    ps = [p.copy()]
    xs = [x.copy()]
    max_overshoot = 0.0

    t = t0
    for k in range(n_steps):
        h = min(step, t0 + t_end - t)
        k1p, k1x = rhs(t, p, x)
        k2p, k2x = rhs(t + h / 2, p + h / 2 * k1p, x + h / 2 * k1x)
        k3p, k3x = rhs(t + h / 2, p + h / 2 * k2p, x + h / 2 * k2x)
        k4p, k4x = rhs(t + h, p + h * k3p, x + h * k3x)
        p = p + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        t = t0 + (k + 1) * step if h == step else t0 + t_end
        over = max(float(-p.min()), float(p.max() - 1.0), 0.0)
        if over > OVERSHOOT_TOL:
            raise StepTooLarge(
                f"fraction overshoot {over:.3e} at t = {t:.6g}; reduce the step")
        max_overshoot = max(max_overshoot, over)
        np.clip(p, 0.0, 1.0, out=p)
        if (k + 1) % store_every == 0 or k == n_steps - 1:
            times.append(t)
            ps.append(p.copy())
            xs.append(x.copy())

    traj = Trajectory(
        times=np.asarray(times), p=np.asarray(ps), x=np.asarray(xs),
        n=x.size, m=1, metadata={"max_overshoot": max_overshoot})
    if d is not None:
        traj.n, traj.m = d.n, d.m
        ref = np.asarray(s0.x, dtype=float).reshape(d.m, d.n).sum(axis=1)
        layer_mass = traj.x.reshape(-1, d.m, d.n).sum(axis=2)
        drift = float(np.max(np.abs(layer_mass - ref[None, :]) / ref[None, :]))
        traj.metadata["mass_drift"] = drift
        if drift > MASS_DRIFT_TOL:
            raise StepTooLarge(
                f"per-layer population drift {drift:.3e} exceeds {MASS_DRIFT_TOL}")
    return traj


def _philox_streams(seed, replica, n, m):
    return [[np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(replica, a, i))))
        for i in range(n)] for a in range(m)]


def simulate_stochastic(d, r, counts0, infected0, t_end, dt=0.01, seed=0, replica=0,
                        store_every=1):
    """Synchronous tau-leaping at fixed dt on integer (S, I) counts.

    Each step draws, from the pre-step state: a multinomial move over
    {stay} + out-neighbours for the susceptibles and infected of every
    (node, layer), a binomial infection draw with probability
    beta * p_avg * dt against the susceptibles, and a binomial recovery draw
    with probability delta * dt against the infected.  Any per-event
    probability above 0.2 raises StepTooCoarse.  Per-layer totals are exactly
    conserved.
    """
    counts = np.array(counts0, dtype=np.int64).reshape(d.m, d.n)
    infected = np.array(infected0, dtype=np.int64).reshape(d.m, d.n)
    if np.any(counts < 0) or np.any(infected < 0) or np.any(infected > counts):
        raise ValueError("need 0 <= infected0 <= counts0")
    bg, dg = r.grids()
    worst = max(float(np.max([g.exit_rates.max() for g in d.layers])) * dt,
                float(bg.max()) * dt, float(dg.max()) * dt)
    if worst > EVENT_PROBABILITY_CAP:
        raise StepTooCoarse(
            f"largest per-step event probability {worst:.3f} exceeds "
            f"{EVENT_PROBABILITY_CAP}; reduce dt")

    # per-(layer, node) move kernel: [stay, destinations...]
    dests, pvals = [], []
    for a, layer in enumerate(d.layers):
        row_d, row_p = [], []
        for i in range(d.n):
            out = np.flatnonzero(layer.q[i] > 0)
            out = out[out != i]
            pv = np.empty(len(out) + 1)
            pv[1:] = layer.q[i, out] * dt
            pv[0] = 1.0 - pv[1:].sum()
            row_d.append(out)
            row_p.append(pv)
        dests.append(row_d)
        pvals.append(row_p)

    streams = _philox_streams(seed, replica, d.n, d.m)
    n_steps = int(np.ceil(round(t_end / dt, 9)))
    S = counts - infected
    I = infected.copy()
    times = [0.0]
    cs = [S.copy()]
    ci = [I.copy()]

    for k in range(n_steps):
        tot_node = (S + I).sum(axis=0)
        inf_node = I.sum(axis=0)
        pavg = np.where(tot_node > 0, inf_node / np.where(tot_node > 0, tot_node, 1), 0.0)
        stay_s = np.zeros_like(S)
        stay_i = np.zeros_like(I)
        arr_s = np.zeros_like(S)
        arr_i = np.zeros_like(I)
        new_inf = np.zeros_like(S)
        new_rec = np.zeros_like(I)
        for a in range(d.m):
            for i in range(d.n):
                g = streams[a][i]
                pv = pvals[a][i]
                ds = dests[a][i]
                ms = g.multinomial(S[a, i], pv)
                mi = g.multinomial(I[a, i], pv)
                stay_s[a, i] = ms[0]
                stay_i[a, i] = mi[0]
                arr_s[a, ds] += ms[1:]
                arr_i[a, ds] += mi[1:]
                new_inf[a, i] = g.binomial(S[a, i], min(bg[a, i] * pavg[i] * dt, 1.0))
                new_rec[a, i] = g.binomial(I[a, i], min(dg[a, i] * dt, 1.0))
        s_avail = stay_s + arr_s
        i_avail = stay_i + arr_i
        # draws use pre-step counts; the caps below only guard integer
        # feasibility against probability-O(dt^2) coincidences
        np.minimum(new_inf, s_avail, out=new_inf)
        np.minimum(new_rec, i_avail, out=new_rec)
        S = s_avail - new_inf + new_rec
        I = i_avail + new_inf - new_rec
        if (k + 1) % store_every == 0 or k == n_steps - 1:
            times.append((k + 1) * dt)
            cs.append(S.copy())
            ci.append(I.copy())

    cs = np.asarray(cs).reshape(len(times), -1)
    ci = np.asarray(ci).reshape(len(times), -1)
    tot = cs + ci
    p = np.where(tot > 0, ci / np.where(tot > 0, tot, 1), 0.0)
    layer_tot = tot.reshape(len(times), d.m, d.n).sum(axis=2)
    if np.any(layer_tot != layer_tot[0]):
        raise AssertionError("per-layer total count changed; conservation bug")
    return Trajectory(
        times=np.asarray(times), p=p, x=tot.astype(float), n=d.n, m=d.m,
        metadata={"seed": seed, "replica": replica, "dt": dt},
        counts_s=cs, counts_i=ci)


def run_ensemble(d, r, counts0, infected0, t_end, dt=0.01, seed=0, replicas=1,
                 max_workers=None, store_every=1):
    """Independent replicas 0..replicas-1 of simulate_stochastic, optionally
    on a thread pool.  Results are ordered by replica index regardless of
    scheduling, so the ensemble is deterministic for a fixed seed."""
    def one(k):
        return simulate_stochastic(d, r, counts0, infected0, t_end, dt=dt,
                                   seed=seed, replica=k, store_every=store_every)
    if max_workers is None:
        max_workers = os.cpu_count() or 1
    max_workers = max(1, min(int(max_workers), replicas))
    if max_workers == 1:
        return [one(k) for k in range(replicas)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, range(replicas)))


def ensemble_mean_node_fraction(trajectories):
    """Mean over replicas of the per-node infected fraction, (T, n)."""
    return np.mean([tr.node_average() for tr in trajectories], axis=0)
