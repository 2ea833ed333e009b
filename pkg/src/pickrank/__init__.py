"""Pick planning for an eight-cup suction tool on simulated package piles.

Modules: :mod:`geometry` (hulls, inscribed ellipses), :mod:`eoat` (cup
placement, lookup table, pick generation), :mod:`scene` (piles, segmentation,
hidden success model), :mod:`ranking` (heuristic and learned ordering),
:mod:`gbdt` (boosted trees), :mod:`harness` (inducts and A/B runs) and
:mod:`cli`.
"""

__version__ = "0.1.0"
