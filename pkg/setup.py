"""Build script: compiles the optional Cython attention kernel.

A missing compiler or Cython only disables the compiled backend; the
package installs and runs on the pure-numpy kernel either way.
"""

import sys

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "streamtag.kernels._attn_c",
        sources=["src/streamtag/kernels/_attn_c.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pure-python fallback install
    print(f"streamtag: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
