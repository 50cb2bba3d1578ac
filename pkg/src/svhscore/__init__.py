"""Joint-damage scoring for hand and foot radiographs.

Stages: preprocessing, limb masking (classic entropy/Otsu algorithm or a
small U-Net), joint detection and identification, and ordinal per-joint
narrowing/erosion scoring, plus a synthetic data generator to train and
check every stage.
"""
__version__ = "0.1.0"
