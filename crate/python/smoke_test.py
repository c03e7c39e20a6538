"""Smoke test for the netobs Python extension.

Build and install first, e.g. ``maturin develop -m crates/python/Cargo.toml``
or ``pip install crates/python``.
"""

import math

import netobs_py as nb


def main():
    model = nb.Model.load("hill5")
    assert model.dim == 5
    assert model.names[0] == "A"
    h = model.recommended_h

    x0 = [0.6, 0.4, 0.8, 0.3, 0.7]
    traj = model.simulate(x0, 30)
    assert len(traj) == 30 and len(traj[0]) == 5
    assert traj[0] == x0

    jac = model.output_jacobian(x0, 30, [0, 2])
    assert len(jac) == 60 and len(jac[0]) == 5

    sel = model.select_sensors(x0, 30, 2, solver="exhaustive")
    greedy = model.select_sensors(x0, 30, 2, solver="greedy")
    assert len(sel.sensors) == 2
    assert sel.objective >= greedy.objective - 1e-12

    # same-model data through the chosen sensors: exact recovery
    y = [[row[i] for i in sel.sensors] for row in traj]
    guess = [0.5] * 5
    est = model.estimate(y, sel.sensors, guess, truth=x0)
    assert est.eta is not None and est.eta < 1e-8, est

    gram = model.gramian(x0, 30, [0, 1, 2, 3, 4], definition=2)
    assert len(gram) == 5
    assert math.isfinite(nb.logdet(gram))

    h2o2 = nb.Model.load("h2o2_mini")
    comps, roots = h2o2.sccs()
    assert len(comps) == 2 and roots.count(True) == 1

    rows = nb.run_sweep("model = 'hill5'\nn_samples = [20]\nfractions = [0.4]\ndata = 'same_model'\n")
    assert len(rows) == 1 and rows[0][5] == "ok", rows
    print(f"ok: h={h}, selection {sel}, {est}")


if __name__ == "__main__":
    main()
