import os

from setuptools import Extension, setup

# The compiled core is optional: without Cython (or with MTLOCO_NO_EXT=1) the
# package installs pure Python and selects the fallback kernels at import.
ext_modules = []
if os.environ.get("MTLOCO_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "mtloco._kernels._native",
                    ["src/mtloco/_kernels/_native.pyx"],
                    # no fast-math / FMA contraction: results must match the fallback bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
