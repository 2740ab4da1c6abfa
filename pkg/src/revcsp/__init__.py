"""Reversible communicating processes with virtual-time rollback.

Modules, from the bottom up:

* ``calculus``   - syntax, evaluation contexts, substitution, the program reader
* ``hl``         - atomic semantics (the oracle)
* ``protocol``   - the two-half channel cell and its transitions
* ``ll``         - distributed semantics built on the protocol
* ``refinement`` - mapping low-level states to high-level ones, step checking
* ``explorer``   - bounded state-space search and invariant checks
* ``runtime``    - threaded execution
* ``cli``        - the ``revcsp`` command
"""

from importlib import resources

from .calculus import Program, parse_program
from .hl import initial_hl, run_hl
from .ll import initial_ll, run_ll

__all__ = ["Program", "parse_program", "initial_hl", "run_hl", "initial_ll", "run_ll",
           "bundled_program"]


def bundled_program(name: str) -> str:
    """Source text of one of the example programs shipped with the package."""
    return resources.files(__package__).joinpath("programs", f"{name}.rcsp").read_text()
