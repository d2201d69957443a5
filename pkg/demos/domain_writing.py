"""Writing domains on the fly.

The probe rasters a stripe pattern.  Every time the signal climbs through the
upper trigger level (a rising domain wall), a negative pulse is fired at the
tip before the next point is measured.  The pulses grow the negative domains,
so every rising wall should end up further along the scan direction.

    python demos/domain_writing.py --out demo_out/writing
"""

import argparse
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from autoscope.feedback import FeedbackPlan, SchmittTrigger, events_to_jsonl, run_ferrobot, wall_positions
from autoscope.sample import gen_domain_phantom
from autoscope.scope import LatencyModel, ScopeSession, plan_path


def main(out: Path):
    sample = gen_domain_phantom(48, 48, 100.0, "stripes", 0, period=6)
    before = sample.polarization.values.copy()
    trig = SchmittTrigger(high=0.5, low=-0.5)
    plan = FeedbackPlan(trig, ((-6.0, 1.0),), per_line_limit=4)

    session = ScopeSession(sample, latency=LatencyModel(decision_charge=0.01), seed=3)
    path = plan_path("raster", (0.0, 0.0, 100.0, 100.0), nx=48, ny=48)
    events, obs = run_ferrobot(session, sample, plan, path, noise_sigma=0.2, seed=3)
    after = sample.polarization.values

    walls_before = wall_positions(before, trig)
    walls_after = wall_positions(after, trig)
    # pair each original wall with the closest wall after writing; the detector
    # state carries over between lines, so a row may also gain a wall at column 0
    shift = [min((w - b for w in a), key=abs) for a, row in zip(walls_after, walls_before) for b in row if a]

    print(f"{len(obs)} points scanned, {len(events)} triggers, "
          f"{int(np.sum(before != after))} pixels switched")
    print(f"mean rising-wall displacement: {np.mean(shift):+.2f} px per wall (positive = along the scan)")
    totals = session.ledger.totals()
    print("simulated time by activity: " + ", ".join(f"{k} {v:.3f} s" for k, v in totals.items() if v))

    out.mkdir(parents=True, exist_ok=True)
    (out / "events.jsonl").write_text(events_to_jsonl(events))
    fig = Figure(figsize=(7, 3.5))
    for i, (img, title) in enumerate(((before, "before"), (after, "after"))):
        ax = fig.add_subplot(1, 2, i + 1)
        ax.imshow(img, cmap="gray")
        ax.set_title(title)
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(out / "before_after.png", dpi=120)
    print(f"figure and event log in {out}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("demo_out/writing"))
    main(p.parse_args().out)
