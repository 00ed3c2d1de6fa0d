#!/usr/bin/env python3
"""
Typed-decoder question generation

Distills post/question corpora, predicts topic words with PMI, trains soft
and hard typed decoders and evaluates the generated questions.
"""

import sys
import os

# Add the current directory to the Python path to ensure the typedq package is found
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from typedq.cli import main

if __name__ == '__main__':
    sys.exit(main())
