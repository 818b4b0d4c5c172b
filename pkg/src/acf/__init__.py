"""Affordance coordinate frames: estimation, association, manipulation and evaluation."""

from .core import Acf, ActionClass, ObjectClass, PartClass, PartInstance
from .errors import AcfError

__all__ = ["Acf", "AcfError", "ActionClass", "ObjectClass", "PartClass", "PartInstance"]
__version__ = "0.1.0"
