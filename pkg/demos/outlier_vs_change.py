"""Outlier or change?  A planted series with both kinds of excursion.

Background letters come from f0.  One segment is drawn from a genuinely new
pmf f1, another from f*, the pmf an unlucky f0 window is most likely to look
like when it crosses the mean threshold.  Both segments push the moving
average over c_s; only the first should be called a change.

Writes the planted series to planted.csv next to this file, so the same data
can be fed to ``ipt analyze``.
"""
import json
from pathlib import Path

import numpy as np

from ipt import Alphabet, Pmf, calibrate_cd, rllf_analysis
from ipt.series import most_likely_outlier, planted_series, segment_windows

rng = np.random.default_rng(7)
alphabet = Alphabet([-1, 0, 1])
f0 = Pmf.uniform(alphabet)
n, c_s = 25, 0.25

f_star = most_likely_outlier(f0, c_s)
f1 = Pmf([0.02, 0.16, 0.82], alphabet)
print("f*  =", np.round(f_star.probs, 4), " mean", round(f_star.mean(), 4))
print("f1  =", f1.probs, " mean", round(f1.mean(), 4))

x, (change_span, outlier_span) = planted_series(f0, [(3000, f1), (7000, f_star)], 10_000, 100, rng)
c_d = calibrate_cd(f0, n, c_s, 95, rng=np.random.default_rng(1))
print(f"c_d (95th percentile of chance crossings) = {c_d:.4f}")

rows = rllf_analysis(x, alphabet, n, c_s, c_d, f0_mode="explicit", f0=f0)
for name, span, want in (("f1 segment", change_span, True), ("f* segment", outlier_span, False)):
    inside = segment_windows(rows, span, n)
    crossed = [r for r in inside if r.s_crossed]
    right = np.mean([r.change == want for r in crossed]) if crossed else float("nan")
    print(f"{name}: {len(crossed)}/{len(inside)} windows cross c_s, {right:.0%} classified as "
          f"{'change' if want else 'outlier'}")

background = [r for r in rows if r.s_crossed and not any(segment_windows([r], s, n)
                                                          for s in (change_span, outlier_span))]
print(f"elsewhere: {len(background)} crossings, {sum(r.change for r in background)} called a change")

out = Path(__file__).with_name("planted.csv")
out.write_text("t,value\n" + "".join(f"{t},{v:g}\n" for t, v in enumerate(x)))
# the letters are already the alphabet, so the quantizer just maps them to themselves
cfg = out.with_name("planted.json")
cfg.write_text(json.dumps({"column": "value", "n": n, "c_s": c_s, "c_d": round(c_d, 4),
                           "quantizer": {"mode": "explicit", "edges": [-1.5, -0.5, 0.5, 1.5],
                                         "letters": [-1, 0, 1]}}, indent=2))
print(f"wrote {out.name} and {cfg.name}; try: ipt analyze --input {out} --config {cfg}")
