"""Smoke test for the Python bindings.

Build and install the extension first, e.g.

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke_test.py`.
"""

import math

import hybrid_sl


def main():
    assert set(hybrid_sl.benchmark_names()) == {
        "weak_strong",
        "three_gear",
        "chemotherapy",
        "dc_ac_inverter",
    }

    ws = hybrid_sl.Benchmark("weak_strong")
    assert ws.dim == 1 and ws.modes == 2
    assert ws.nodes == [100]
    assert ws.validate() == []

    pi = ws.solve("pi", eps=1e-10)
    vi = ws.solve("vi", eps=1e-10)
    assert pi.converged and vi.converged
    assert pi.policy_improvements < 20 < vi.iterations
    gap = max(abs(a - b) for a, b in zip(pi.values, vi.values))
    assert gap < 1e-6, gap
    assert pi.residual() < 1e-9

    # one more sweep leaves the fixed point in place
    swept = ws.bellman(pi.values)
    assert max(abs(a - b) for a, b in zip(swept, pi.values)) < 1e-9

    v = pi.value_at([0.5], 1)
    tr = pi.trajectory()
    assert all(-1.0 <= x[0] <= 1.0 for x in tr.x)
    assert math.isclose(tr.t[-1], 20.0)
    assert abs(tr.accumulated_cost - v) <= 0.05 * v

    kinds = {kind for kind, _, _ in pi.policy()}
    assert "autonomous_jump" in kinds
    assert pi.policy_csv().startswith("mode,node,kind,control,destination_mode,value")

    chemo = hybrid_sl.Benchmark("chemotherapy", nodes=[30, 30])
    sol = chemo.solve("mpi", eps=1e-3)
    assert sol.converged and len(sol.values) == len(chemo)
    assert len(sol.trajectory(t_f=5.0)) > 0

    try:
        ws.solve("newton")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown solver accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
