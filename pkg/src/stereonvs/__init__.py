"""Stereo-based novel view synthesis.

Two learned stages over classical geometry: an unsupervised stereo
disparity network feeds depth to a z-buffered forward mapper, and a texture
inpainting network fuses the warped reference views into the final
rendering.
"""

__version__ = "0.1.0"
