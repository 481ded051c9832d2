import os

from setuptools import Extension, setup

# The compiled kernels are an accelerator, not a requirement: sadsp.ndkit
# falls back to the pure-Python kernels when the extension is absent.
# SADSP_SKIP_EXT=1 builds a pure-Python wheel on purpose.
ext_modules = []
if not os.environ.get("SADSP_SKIP_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        extensions = [
            Extension(
                "sadsp.ndkit._kernels",
                ["src/sadsp/ndkit/_kernels.pyx"],
                # fp-contract off: the fallback must be bit-identical, so no FMA.
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
