"""Smoke test for the incentive extension module."""

import tempfile
from pathlib import Path

import incentive


def main():
    p = incentive.ModelParams()
    net = incentive.Network.regular()
    off = incentive.Schedule.constant(1)
    traj = incentive.integrate(p, net, off)
    i, r, theta = traj.class_series(0)
    assert len(traj) == 1001
    assert all(abs(a + b + c - 1.0) < 1e-10 for a, b, c in zip(i, r, theta))
    assert abs(traj.profit - r[-1]) < 1e-12

    sweep = incentive.fbs(p)
    nlp = incentive.nlp(p, net, starts=6)
    assert sweep.labels == ["both-phases"], sweep.labels
    assert nlp.labels == ["both-phases"], nlp.labels
    assert abs(sweep.profit - nlp.profit) < 1e-3
    again = incentive.integrate(p, net, nlp.schedule)
    assert abs(again.profit - nlp.profit) < 1e-9

    checks = incentive.lemmas(p)
    assert all(ok for _, ok, _ in checks), checks

    fig6_params, fig6_net = incentive.load_scenario("fig6-disassortative")
    assert abs(fig6_net.mixing[1][0] - 0.5) < 1e-12
    assert fig6_params.gating == "referrer"

    try:
        incentive.ModelParams(beta=0.99)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid rates accepted")

    with tempfile.TemporaryDirectory() as out:
        summary = incentive.run_scenario("fig2-beta013", out)
        assert "label=influence-and-exploit" in summary.splitlines()[0]
        assert (Path(out) / "costate.csv").is_file()

    print("smoke test passed:", nlp)


if __name__ == "__main__":
    main()
