"""Smoke test for the padshield extension module.

Build first, e.g. `pip install --no-build-isolation -e crates/python`.
"""

import padshield


def main():
    base = padshield.synthetic_trace(seed=7, id="page")
    assert len(base) > 0
    real_out = base.count(1, False)
    real_in = base.count(-1, False)

    front = padshield.front_machine(1500, 1.0, 14.0, 30)
    assert len(front) == 31
    again = padshield.Machine.from_mbn(front.to_mbn())
    assert again == front

    defended = padshield.simulate(base, client=[front], relay=[front], seed=1)
    assert defended.count(1, False) == real_out
    assert defended.count(-1, False) == real_in
    assert defended.count(1, True) + defended.count(-1, True) > 0
    assert defended.to_defended_string()

    relay, client = padshield.regulator_machines(238, 0.94, 3.55, 3.95)
    assert len(client) == 4
    reg = padshield.simulate(base, client=[client], relay=[relay], seed=2, drop_stalled=True)
    assert reg.count(-1, False) <= real_in

    bursts = padshield.trace_bursts(padshield.synthetic_trace(seed=8))
    c, r = padshield.surakav_machines(bursts)
    sk = padshield.simulate(base, client=[c], relay=[r], seed=3, drop_stalled=True)
    assert len(sk) > 0
    ref = padshield.surakav_reference(base, bursts * 100, 0.4, seed=4)
    assert ref.count(1, False) == real_out

    fr = padshield.front_reference(base, 1700, 1.0, 14.0, seed=5)
    assert fr.count(-1, False) == real_in
    rr = padshield.regulator_reference(base, 220, 0.94, 3.55, 2815, 3.95, 1.77)
    assert rr.count(-1, False) == real_in

    assert padshield.burst_thresholds(10, 1e-12) == (10, 10)

    up, down = padshield.aggregate(defended, 25)
    assert len(up) == len(down)
    assert padshield.pearson(down, down) == 1.0
    assert padshield.lcss([1, 2, 3], [1, 2, 3]) == 1.0
    send, recv, overall, latency = padshield.overhead(defended, base)
    assert latency == 0.0 and send > 0

    try:
        padshield.front_machine(1500, 1.0, 14.0, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("psi = 0 accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
