"""calibkit: train-time and post-hoc confidence calibration at desk scale.

The package is organized around a handful of small modules:

* ``numerics``: deterministic linear algebra, stable softmax, seeded RNG
* ``metrics``: ECE / SCE / MCE / per-class calibration error and
  reliability-diagram data
* ``losses``: classification losses (NLL, label smoothing, focal, Brier)
  and calibration-auxiliary terms (MDCA, DCA) with analytic logit gradients
* ``model``: a small MLP plus a deterministic SGD/momentum trainer
* ``posthoc``: temperature scaling and Dirichlet calibration with ODIR
* ``data``: seeded synthetic dataset generators and file formats
* ``cli``: the ``calibkit`` command-line front end
"""

__version__ = "0.1.0"
