"""Mode-resolved simulation of type-II SPDC in multimode PPKTP waveguides."""

__version__ = "0.1.0"
