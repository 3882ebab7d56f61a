"""Twin-beam photocount simulation, detector inversion and higher-order
sub-Poissonian nonclassicality criteria."""

__version__ = "0.1.0"
