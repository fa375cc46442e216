"""cryoflow: deformation-field VAE + latent flow matching over 3D density maps."""

__version__ = "0.1.0"
