"""bladedesk: desk-scale closed-loop compressor blade design.

Natural-language (or structured) design requests are planned by a
supervisor, executed by generative-design / surrogate-prediction /
optimization / validation stages, and everything is checked against a
deterministic synthetic physics oracle so the complete loop is reproducible
on one machine.
"""

__version__ = "0.1.0"
