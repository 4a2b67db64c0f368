"""Voice conversion toolkit built around formant equalization: target
spectra are warped onto the source formant layout before mapper training,
and the warp is reversed after conversion."""

__version__ = "0.1.0"

from . import alignment, complexity, features, formants, gmm, pipeline, warping  # noqa: F401
from .errors import InputError, NumericalError  # noqa: F401
