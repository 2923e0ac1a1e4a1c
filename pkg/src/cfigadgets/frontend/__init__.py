"""CFG interchange format and instruction lifters."""

from .dispatch import lift, lift_instruction
from .interchange import load_program, parse_program, program_to_document, serialize_program
from .lifted import Lifted

__all__ = [
    "Lifted",
    "lift",
    "lift_instruction",
    "load_program",
    "parse_program",
    "program_to_document",
    "serialize_program",
]
