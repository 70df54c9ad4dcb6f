# ruff: noqa: F401, F403

from .abstract import *
from .cli import *
from .exceptions import *
from .ldg import *
from .linalg import *
from .mesh import *
from .polynomials import *
from .problems import *
from .rdg import *
from .reconstruction import *
from .timestepping import *
from .types import *
