"""Synthetic WiFi CSI localization testbed.

Pipeline: multipath CSI simulation -> cleaning and image fusion -> spatial
pyramid pooled features -> inverse-distance AP graphs -> GNN localizer,
with per-scenario meta-training and similarity-guided fine-tuning on top.
"""

__version__ = "0.1.0"
