"""Instruction-set simulator and mini toolchain for PC-range based in-process isolation."""

from .assembler import assemble, assemble_file
from .image import ProgramImage
from .machine import load_image, run, step
from .pulpregs import N_SMAR

__version__ = "0.1.0"

__all__ = ["N_SMAR", "ProgramImage", "assemble", "assemble_file", "load_image", "run", "step"]
