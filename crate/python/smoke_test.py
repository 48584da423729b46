"""Smoke test for the thermophase extension module.

Build with `maturin develop -m crates/python/Cargo.toml`, or copy the cdylib
from `cargo build -p thermophase-py --features extension-module` next to this
file as `thermophase.so`, then run `python python/smoke_test.py`.
"""

import math

import thermophase as tp


def main():
    p = tp.ModelParams(alpha=0.0, d_c=1.0)
    p.validate()
    assert p.conductivity == "smoothstep"
    assert abs(p.k_d(1.0) - math.exp(-1.0)) < 1e-15
    assert tp.potential_prime(-1.0) < 0.0 < tp.potential_prime(2.0)

    eq = tp.equilibrium(1.0, p)
    assert eq.stable
    assert max(abs(r) for r in eq.residuals) < 1e-10
    a0 = tp.alpha0(p, eq.default_m_f())
    assert 0.0 < a0 < math.inf
    p.alpha = 0.5 * a0

    n = 32
    xs = [(i + 0.5) / n for i in range(n)]
    bump = [1e-2 * math.cos(math.pi * x) for x in xs]
    traj = tp.simulate(
        p,
        [eq.theta_bar + b for b in bump],
        [eq.c_bar + b for b in bump],
        [eq.phi_bar + b for b in bump],
        t_end=1.0,
        c0=0.01,
        eq=eq,
    )
    kappa, r2, mono = traj.fit_decay()
    assert kappa > 0.0 and r2 >= 0.99 and mono == 1.0, (kappa, r2, mono)
    q = traj.conserved
    assert abs(q[-1] - q[0]) <= 1e-12 * abs(q[0])
    failed = [name for name, ok, _ in traj.verify() if not ok]
    assert not failed, failed
    print("kappa_fit=%.6g r2=%.6f steps=%d failed=%s" % (kappa, r2, len(q) - 1, failed))

    try:
        tp.ModelParams(tau_phi=-1.0).validate()
    except ValueError as e:
        assert "H4" in str(e)
    else:
        raise AssertionError("negative tau_phi accepted")
    print("ok")


if __name__ == "__main__":
    main()
