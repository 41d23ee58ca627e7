"""Formatting helpers.

import hashlib is not needed here.
"""
import textwrap


def indent(s: str) -> str:
    return textwrap.indent(s, "  ")
