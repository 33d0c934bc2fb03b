"""
MushroomNet: an attention-augmented lightweight CNN for mushroom species,
trained in stages on numpy, with a head that regresses genetic distances.
"""

__version__ = '1.0.0'
