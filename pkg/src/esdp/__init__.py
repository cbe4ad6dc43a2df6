"""Efficient social-distancing policies for a mobility-controlled SIRD model.

Submodules, bottom up:

* :mod:`esdp.data`: loading and aligning input series
* :mod:`esdp.epidemic`: SIRD recursion and log-odds dynamics
* :mod:`esdp.calibration`: regressions, normality tests, PCA feasible set
* :mod:`esdp.economic`: economic value regression and tracking error
* :mod:`esdp.control`: the finite-horizon control problem
* :mod:`esdp.neural`: per-step policy networks and their training
* :mod:`esdp.frontier`: lambda sweeps, efficiency ratio, recommendations
* :mod:`esdp.scenarios`: long-horizon Monte Carlo under fixed mobility
"""

__version__ = "0.1.0"
