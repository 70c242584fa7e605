#!/usr/bin/env python3
"""Brute-force reference oracle for the channel, propulsion, and advantage math.

Regenerates the committed vector files under vectors/. Every formula here is
written out term by term, straight from the published model equations, with no
shared code with the Rust implementation. The Rust test suite and the CLI
`verify` command compare against these files.

Usage: python3 tools/gen_vectors.py [out_dir]
"""

import json
import math
import os
import sys

import numpy as np

# ---------------------------------------------------------------------------
# Air-to-ground channel
# ---------------------------------------------------------------------------


def pathloss_los(h, d, fc_ghz):
    return 30.9 + (22.25 - 0.5 * math.log10(h)) * math.log10(d) + 20.0 * math.log10(fc_ghz)


def pathloss_nlos(h, d, fc_ghz):
    raw = 32.4 + (43.2 - 7.6 * math.log10(h)) * math.log10(d) + 20.0 * math.log10(fc_ghz)
    return max(pathloss_los(h, d, fc_ghz), raw)


def los_probability(h, d):
    d0 = max(294.05 * math.log10(h) - 432.94, 18.0)
    p1 = 233.98 * math.log10(h) - 0.95
    if p1 <= 0.0:
        raise ValueError("altitude below model validity")
    r = math.sqrt(d * d - h * h)
    if r <= d0:
        return 1.0
    p = d0 / r + math.exp(-r / p1 + d0 / p1)
    return min(max(p, 0.0), 1.0)


def mean_pathloss(h, d, fc_ghz):
    p_los = los_probability(h, d)
    return p_los * pathloss_los(h, d, fc_ghz) + (1.0 - p_los) * pathloss_nlos(h, d, fc_ghz)


# ---------------------------------------------------------------------------
# Rotor-craft propulsion
# ---------------------------------------------------------------------------

RHO = 1.225      # air density, kg/m^3
DISC_AREA = 0.79 # rotor disc area, m^2
DELTA = 0.012    # blade section drag coefficient
C_S = 0.1        # rotor solidity
S_FP = 0.01      # fuselage equivalent flat plate area, m^2
C_T = 0.3        # thrust coefficient
C_F = 0.13       # induced power correction factor
MASS = 2.0       # kg
G = 9.8          # m/s^2


def thrust(v, a):
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    speed = float(np.linalg.norm(v))
    gravity = np.array([0.0, 0.0, -G])
    f = MASS * a + 0.5 * RHO * S_FP * speed * v - MASS * gravity
    return float(np.linalg.norm(f))


def propulsion_energy(v, a, ts):
    v = np.asarray(v, dtype=float)
    speed = float(np.linalg.norm(v))
    f = thrust(v, a)

    blade = (DELTA / 8.0) * (f / (C_T * RHO * DISC_AREA) + 3.0 * speed * speed) \
        * math.sqrt(RHO * C_S * C_S * DISC_AREA * f / C_T)

    # Climbing spends power on potential energy; descent does not refund it
    # (no regenerative braking on a rotor), so the climb term is floored at 0.
    # Without the floor, steep descents would yield negative total power.
    sin_climb = (v[2] / speed) if speed > 0.0 else 0.0
    climb = MASS * G * speed * max(sin_climb, 0.0)

    induced = (1.0 + C_F) * f * math.sqrt(
        math.sqrt(f * f / (4.0 * RHO * RHO * DISC_AREA * DISC_AREA) + speed ** 4 / 4.0)
        - speed * speed / 2.0
    )

    parasite = 0.5 * RHO * S_FP * speed ** 3

    return (blade + climb + induced + parasite) * ts


# ---------------------------------------------------------------------------
# Generalized advantage estimation, explicit double sum
# ---------------------------------------------------------------------------


def gae_double_sum(rewards, values, dones, bootstrap, gamma, lam):
    n = len(rewards)

    def next_value(t):
        if dones[t]:
            return 0.0
        return values[t + 1] if t + 1 < n else bootstrap

    deltas = [rewards[t] + gamma * next_value(t) - values[t] for t in range(n)]

    adv = []
    for t in range(n):
        acc = 0.0
        for tp in range(t, n):
            acc += (gamma * lam) ** (tp - t) * deltas[tp]
            if dones[tp]:
                break
        adv.append(acc)
    return adv


# ---------------------------------------------------------------------------
# Vector file generation
# ---------------------------------------------------------------------------


def fmt(x):
    return "%.17g" % x


def gen_channel(out_dir, rng, n=1000):
    path = os.path.join(out_dir, "channel.csv")
    with open(path, "w") as fh:
        fh.write("h,d,fc_ghz,l_los_db,l_nlos_db,p_los,l_mean_db\n")
        for _ in range(n):
            h = rng.uniform(20.0, 150.0)
            d = h * rng.uniform(1.0, 30.0)
            fc = rng.uniform(0.5, 6.0)
            row = [h, d, fc, pathloss_los(h, d, fc), pathloss_nlos(h, d, fc),
                   los_probability(h, d), mean_pathloss(h, d, fc)]
            fh.write(",".join(fmt(x) for x in row) + "\n")
    return path


def gen_energy(out_dir, rng, n=1000):
    path = os.path.join(out_dir, "energy.csv")
    with open(path, "w") as fh:
        fh.write("vx,vy,vz,ax,ay,az,ts,thrust_n,energy_j\n")
        for _ in range(n):
            v_dir = rng.normal(size=3)
            v_dir /= np.linalg.norm(v_dir)
            v = v_dir * rng.uniform(0.0, 20.0)
            a_dir = rng.normal(size=3)
            a_dir /= np.linalg.norm(a_dir)
            a = a_dir * rng.uniform(0.0, 5.0)
            ts = 1.0 if rng.random() < 0.7 else rng.uniform(0.25, 2.0)
            row = list(v) + list(a) + [ts, thrust(v, a), propulsion_energy(v, a, ts)]
            fh.write(",".join(fmt(x) for x in row) + "\n")
    return path


def gen_gae(out_dir, rng, n=100):
    path = os.path.join(out_dir, "gae.jsonl")
    with open(path, "w") as fh:
        for _ in range(n):
            length = int(rng.integers(1, 11))
            rewards = [float(x) for x in rng.normal(size=length)]
            values = [float(x) for x in rng.normal(size=length)]
            dones = [bool(rng.random() < 0.2) for _ in range(length)]
            bootstrap = float(rng.normal())
            gamma = float(rng.uniform(0.5, 1.0))
            lam = float(rng.uniform(0.0, 1.0))
            adv = gae_double_sum(rewards, values, dones, bootstrap, gamma, lam)
            fh.write(json.dumps({
                "rewards": rewards, "values": values, "dones": dones,
                "bootstrap": bootstrap, "gamma": gamma, "lambda": lam,
                "advantages": adv,
            }) + "\n")
    return path


def print_reference_values():
    print("# reference values")
    print("l_los(h=100,d=141.42135623730951,fc=2) =", fmt(pathloss_los(100.0, 141.42135623730951, 2.0)))
    print("l_nlos(h=100,d=141.42135623730951,fc=2) =", fmt(pathloss_nlos(100.0, 141.42135623730951, 2.0)))
    d60 = math.sqrt(60.0 ** 2 + 500.0 ** 2)
    print("d(h=60,r=500) =", fmt(d60))
    print("l_mean(h=60,d,fc=2) =", fmt(mean_pathloss(60.0, d60, 2.0)))
    print("p_los(h=60,d) =", fmt(los_probability(60.0, d60)))
    print("d0(h=100) =", fmt(max(294.05 * 2.0 - 432.94, 18.0)))
    print("p1(h=100) =", fmt(233.98 * 2.0 - 0.95))
    print("hover thrust =", fmt(thrust([0, 0, 0], [0, 0, 0])))
    print("hover energy ts=1 =", fmt(propulsion_energy([0, 0, 0], [0, 0, 0], 1.0)))
    print("thrust(v=10x) =", fmt(thrust([10, 0, 0], [0, 0, 0])))
    print("energy(v=10x,ts=1) =", fmt(propulsion_energy([10, 0, 0], [0, 0, 0], 1.0)))
    print("energy(v=(3,4,1),a=(1,-2,0.5),ts=1) =", fmt(propulsion_energy([3, 4, 1], [1, -2, 0.5], 1.0)))


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "vectors"
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(20250417)
    for path in (gen_channel(out_dir, rng), gen_energy(out_dir, rng), gen_gae(out_dir, rng)):
        print("wrote", path)
    print_reference_values()


if __name__ == "__main__":
    main()
