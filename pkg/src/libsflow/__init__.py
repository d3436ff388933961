"""Spectra to NMF latents to a RealNVP flow, plus per-oxide regressors with bootstrap intervals."""

__version__ = "0.1.0"

from . import errors, spectra, nmf, flow, regress, uq  # noqa: E402

__all__ = ["errors", "spectra", "nmf", "flow", "regress", "uq", "__version__"]
