import os
import sys

_here = os.path.dirname(__file__)
sys.path.insert(0, _here)                                    # oracles.py
_src = os.path.join(os.path.dirname(_here), "src")
if os.path.isdir(_src) and _src not in sys.path:
    sys.path.insert(0, _src)                                 # uninstalled runs
