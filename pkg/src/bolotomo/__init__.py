"""Synthetic two-camera bolometer tomography with an up-convolutional
reconstruction network, trained end to end on Gaussian-mixture phantoms
whose line integrals have closed forms."""

__version__ = "0.1.0"
