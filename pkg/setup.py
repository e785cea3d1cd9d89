"""Build script for the compiled sequence kernels.

The extension is optional: if compilation fails (no compiler, no Cython),
the package installs anyway and falls back to the pure-numpy backend in
``tempora.backend._ref``.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "tempora.backend._seq",
                ["src/tempora/backend/_seq.pyx"],
                include_dirs=[np.get_include()],
                libraries=["mvec", "m"],
                extra_compile_args=["-O3", "-march=native", "-ffast-math"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
