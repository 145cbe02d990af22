# -*- coding: utf-8 -*-
import logging
import os
from logging.handlers import RotatingFileHandler

from asdl.config import AsdlConfig
import asdl.const as const
from asdl.utils import ContextFilter

# Load User Defined Config
DEFAULT_CONFIG_PATH = os.path.expanduser('~/.config/asdl/config.ini')
CONFIG_PATH = os.environ.get('ASDL_CONFIG_PATH', DEFAULT_CONFIG_PATH)
CONFIG = AsdlConfig(CONFIG_PATH)

# asdl Settings
PROJECT = 'asdl'
VERSION = __version__ = const.__version__
WORKERS = CONFIG.get('asdl.workers', 1, int)
DEFAULT_PRESET = CONFIG.get('asdl.preset', 'desk')
DEFAULT_OUTPUT = os.path.expanduser(CONFIG.get('asdl.output', 'runs'))
SHOW_PROGRESS = CONFIG.get('asdl.progress', False, bool)

# Logging Configuration
log = logging.getLogger('asdl')
logfile = CONFIG.get('log.path')
logformat = CONFIG.get('log.format', '%(asctime)s %(module)12s:%(lineno)-4s %(levelname)-9s '
                                     '[%(stage)s seed=%(seed)s cfg=%(confighash)s] %(message)s')
loglevel = CONFIG.get('log.level', 'INFO').upper()
loghandler = logging.NullHandler()

if logfile:  # pragma: no cover
    logbackups = CONFIG.get('log.backup_count', 3, int)
    logbytes = CONFIG.get('log.rotate_bytes', 512000, int)
    loghandler = RotatingFileHandler(os.path.expanduser(logfile), 'a', logbytes, logbackups)

logfilter = ContextFilter()
loghandler.setFormatter(logging.Formatter(logformat))
loghandler.addFilter(logfilter)
log.addHandler(loghandler)
log.setLevel(loglevel)
log.addFilter(logfilter)
