"""2D finite-element simulation of unsaturated flow and solute transport.

Subpackages cover mesh handling, soil constitutive relations, P1
assembly, the flow and transport time steppers, exact infiltration
references, verification metrics, and the scenario-driving CLI.
"""

__version__ = "0.1.0"
