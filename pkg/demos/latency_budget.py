"""How much of an autonomous experiment is spent thinking?

Each decision in the exploration loop costs a configured amount of simulated
time.  Here the same run is repeated with decision charges from 1 ms to 1 s
and the ledger is split into measuring, moving and deciding.  Batching
several measurements per decision is the usual remedy when deciding is slow.

    python demos/latency_budget.py
"""

from autoscope.campaign import run_campaign, spec_from_dict


def run(charge: float, batch: int):
    spec = spec_from_dict({
        "kind": "bo_explore",
        "sample": {"width": 32, "height": 32, "period": 8},
        "scope": {"noise_sigma": 0.05, "latency": {"decision_charge": charge}},
        "engine": {"n_seed_points": 16, "batch": batch, "max_measurements": 100},
    })
    return run_campaign(spec)


def main():
    print(f"{'charge':>8} {'batch':>5} {'decisions':>9} {'clock':>8} {'deciding':>9} {'rmse':>6}")
    for charge in (0.001, 0.01, 0.1, 1.0):
        for batch in (1, 8):
            rec = run(charge, batch)
            frac = rec.ledger.fractions()["decision"]
            print(f"{charge:8.3f} {batch:5d} {len(rec.decisions):9d} {rec.ledger.clock:7.2f}s "
                  f"{100 * frac:8.1f}% {rec.summary['final_rmse']:6.3f}")


if __name__ == "__main__":
    main()
