"""splatfield: semantic anisotropic Gaussian fields on the CPU.

Fits 3D Gaussians carrying latent semantic attributes to sparse posed views
plus per-view feature maps, renders color / feature / depth at novel views,
and performs promptable and open-vocabulary segmentation.
"""

__version__ = "0.1.0"
