"""Obstacle detection on reflective floors from appearance and ground-plane parallax.

Modules follow the pipeline order: ``geometry`` (poses, floor homography,
parallax), ``flow`` (pyramidal Lucas-Kanade), ``proposals`` (edge points and
sliding windows), ``features`` (19-channel box descriptors), ``model``
(regression forests and their fusion), ``probmap`` (weight-decayed map),
``evaluation`` (ROC and instance metrics), ``synth`` (synthetic scenes), ``io``
and ``pipeline`` (sequence handling), ``benchmark`` and ``cli``.
"""

__version__ = "0.1.0"
