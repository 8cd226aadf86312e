"""Select the coordinate-descent kernel at import time.

The compiled extension is used when it was built; otherwise the pure-Python
kernel.  Setting ``MBPATH_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _cd_py

BACKEND = "python"
cd_solve = _cd_py.cd_solve
cd_path = _cd_py.cd_path

if os.environ.get("MBPATH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._cd import cd_path, cd_solve  # noqa: F811
    except ImportError:  # extension not compiled
        pass
    else:
        BACKEND = "cython"

python_cd_solve = _cd_py.cd_solve
python_cd_path = _cd_py.cd_path
