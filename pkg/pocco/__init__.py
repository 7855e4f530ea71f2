"""
pocco
~~~~~

Decomposition-based neural solvers for multi-objective routing and packing problems,
trained from pairwise preferences.

:license: MIT, see LICENSE for more details.
"""

__title__ = "pocco"
__license__ = "MIT"
__version__ = "0.1.0a"

from typing import NamedTuple, Literal

from .enums import *
from .errors import *
from .config import *
from .context_managers import *

from .core import *
from .models.instance import *
from .models.env import *
from .models.weights import *
from .models.pareto import *
from .models.trajectory import *
from .nn import *
from .training import *
from .inference import *
from . import utils


class VersionInfo(NamedTuple):
    major: int
    minor: int
    micro: int
    release_level: Literal["alpha", "beta", "candidate", "final"]
    serial: int


version_info: VersionInfo = VersionInfo(major=0, minor=1, micro=0, release_level="alpha", serial=0)
