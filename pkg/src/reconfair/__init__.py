"""Degradation simulation, reconstruction quality, downstream fairness, and
reconstruction-stage bias mitigation for 2D medical images.

All images are real-valued 2D grids normalized to [0, 1]. Subjects carry
sensitive attributes (sex, age, race) and binary task labels; predictions are
continuous scores in [0, 1] that feed the fairness machinery.
"""

__version__ = "0.1.0"
