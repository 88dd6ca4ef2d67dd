"""Constructive extension of Q-valued maps across a thin annulus."""

from .faces import *  # noqa: F401,F403
from .extensions import *  # noqa: F401,F403
from .assembly import *  # noqa: F401,F403
