"""Smoke test of the `purcell` extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml
    python python/smoke_test.py
"""

import math

import purcell


def check(name, cond):
    print(f"{'ok  ' if cond else 'FAIL'} {name}")
    if not cond:
        raise SystemExit(1)


def main():
    p = purcell.ModelParams(n_ions=11, n_traj=4, t_pulse=100.0, t_decay=100.0, master_seed=7)
    check("params round trip", p.n_ions == 11 and p.to_dict()["n_traj"] == 4)
    try:
        purcell.ModelParams(no_such_field=1.0)
        check("unknown field rejected", False)
    except ValueError:
        check("unknown field rejected", True)

    ens = purcell.sample_ensemble(p)
    again = purcell.sample_ensemble(p)
    check("ensemble size", len(ens) == 4 and all(len(r) == 11 for r in ens))
    check("sampling reproducible", ens[2].detunings == again[2].detunings)
    check("single draw matches ensemble", purcell.sample_disorder(p, 2).couplings == ens[2].couplings)

    weak = p.with_flux(0.01)
    state = purcell.run_pulse(ens[0], weak)
    check("pulse state bounded", all(-1.0 <= z <= 1.0 for z in state["s_z"]))

    trace, fit = purcell.run_point(p, 0.01, 0.0, "local", ens)
    check("trace finite", all(math.isfinite(v) for v in trace.flux))
    check("decay fit converged", fit.converged and fit["gamma"] > 0.0)

    x = [0.1 * k for k in range(1, 60)]
    y = [2.0 * math.exp(-0.5 * t) for t in x]
    exp_fit = purcell.fit_model("exponential", x, y)
    check("exponential recovery", abs(exp_fit["gamma"] - 0.5) < 1e-6)

    coop = purcell.cooperativities(purcell.ModelParams(), 61)
    check("cooperativity report", coop["c_inh"] > 0.0)

    one = purcell.DisorderRealization([0.0], [0.07])
    cmp = purcell.oracle_compare(
        purcell.ModelParams(n_ions=1).with_flux(1e-6), one, fock_cutoff=4, t_end=50.0, samples=11
    )
    check("oracle trace preserved", cmp["max_trace_error"] < 1e-8)
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
