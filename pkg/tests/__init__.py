# -*- coding: utf-8 -*-
import sys
from os.path import dirname, abspath

# Make sure asdl is in the systempath
sys.path.insert(0, dirname(dirname(abspath(__file__))))
