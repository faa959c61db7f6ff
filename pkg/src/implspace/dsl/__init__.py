from .ir import SpaceDefinition, all_choices, flag_choice
from .parser import Diagnostic, ParseError, parse, parse_file
from .printer import pretty_print
from .validate import validate

__all__ = [
    "Diagnostic", "ParseError", "SpaceDefinition", "all_choices", "flag_choice",
    "parse", "parse_file", "pretty_print", "validate",
]
