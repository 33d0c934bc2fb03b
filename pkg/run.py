"""
Command line entry point for MushroomNet
"""

import os
import sys

# Add the project directory to Python path
sys.path.insert(0, os.path.dirname(__file__))

from mushroomnet.cli import main

if __name__ == "__main__":
    main()
