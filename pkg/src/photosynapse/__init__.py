"""Behavioral simulator of a light-stimulated graphene/nanotube synaptic phototransistor."""

__version__ = "0.1.0"
