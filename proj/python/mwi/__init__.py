"""Matter-wave interferometer arrays under common-mode acceleration noise."""

from ._mwi import *  # noqa: F401,F403
from ._mwi import Error, __doc__  # noqa: F401
