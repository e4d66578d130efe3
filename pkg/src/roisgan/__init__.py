"""Region-guided adversarial segmentation of hippocampal ROIs.

A numpy reverse-mode autodiff engine drives a U-Net generator and a
realism-map discriminator; the package also covers data handling, connected
component post-processing, segmentation metrics and Grad-CAM.
"""
__version__ = "0.1.0"
