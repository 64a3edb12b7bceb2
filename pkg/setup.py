"""Build script: compiles the optional convolution kernel extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so any failure here degrades to a pure-Python
install instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "mfcmnet.kernels._convkernels",
                ["src/mfcmnet/kernels/_convkernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level="3",
    )
except Exception as exc:  # noqa: BLE001 - deliberately permissive, see module docstring
    import sys

    print(f"warning: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
