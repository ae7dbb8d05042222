"""
inverter_achievability
----------------------
Certifies which active/reactive power setpoints a grid-connected voltage-source
inverter can track under a time-varying output-voltage constraint, and tunes a
static feedback gain by Monte Carlo to enlarge the achievable set.
"""

__version__ = "0.1.0"
