"""Light on one or two parallel sub-wavelength atomic arrays.

Analytic momentum-space linear response for laterally infinite layers,
truncated-space quantum dynamics for finite ones, and the detected-port
observables (transmission, group delay, photon correlations, two-photon
momentum densities) built on top.  Units throughout: wavelength = 1,
amplitude decay rate gamma = 1.
"""

__version__ = "0.1.0"
