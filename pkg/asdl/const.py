# -*- coding: utf-8 -*-
"""Constants used by asdl."""

# Library version
MAJOR_VERSION = 1
MINOR_VERSION = 0
PATCH_VERSION = 0
__short_version__ = f"{MAJOR_VERSION}.{MINOR_VERSION}"
__version__ = f"{__short_version__}.{PATCH_VERSION}"

# Checkpoint and feature file format versions
CHECKPOINT_VERSION = 1
FEATURE_FILE_VERSION = 1
