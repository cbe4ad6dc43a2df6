"""Calibration round trip on a synthetic panel.

A panel is generated from known infection and economic coefficients and
then re-estimated; the printout puts the truth next to the estimate and
its standard error.
"""

from esdp.calibration import calibrate
from esdp.data import align
from esdp.reference import US_JUN21_DYNAMICS, US_JUN21_INFECTION
from esdp.synthetic import synthetic_panel

panel = synthetic_panel(n_days=120, seed=0)
cal = calibrate(align(panel.mobility, panel.epidemic, panel.index))

names = ("intercept", "rr", "gp", "pa", "ts", "wp", "re")
truth = (US_JUN21_INFECTION.c0, *US_JUN21_INFECTION.c)
fit = cal.infection_fit
print("infection log-odds regression")
for n, t, c, se in zip(names, truth, fit.coefficients, fit.standard_errors):
    print(f"  {n:<10} true {t:+9.4f}  fitted {c:+9.4f}  (se {se:.4f})")
print(f"  R^2 {fit.r_squared:.3f}, residual Shapiro-Wilk p {cal.infection_normality.p_value:.3f}")

print("log-odds dynamics (true / fitted)")
for key, val in cal.dynamics.to_dict().items():
    print(f"  {key:<12} {getattr(US_JUN21_DYNAMICS, key):+.4g} / {val:+.4g}")

print("feasible-set box in PCA scores")
for lo, hi in zip(cal.feasible.lower, cal.feasible.upper):
    print(f"  [{lo:+.4f}, {hi:+.4f}]")
