"""Build script.

The compiled hashing kernels (twigdb._merkle_ext) are optional: if Cython or a
C toolchain is unavailable the package installs in pure-Python mode and the
hashlib fallback is selected at import time.  Set TWIGDB_NO_EXT=1 to skip the
extension build explicitly.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TWIGDB_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "twigdb._merkle_ext",
                    ["src/twigdb/_merkle_ext.pyx"],
                    libraries=["crypto"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # pragma: no cover - build-environment dependent
        print(f"twigdb: compiled kernels disabled ({exc}); using pure-Python fallback")

setup(ext_modules=ext_modules)
