import os

from setuptools import Extension, setup

# The compiled kernel module is an accelerator, not a requirement: rtdap.kernels
# falls back to pure Python when the extension is absent (RTDAP_NO_EXT=1 skips
# the build entirely, e.g. for quick pure-lane installs).
ext_modules = []
if os.environ.get("RTDAP_NO_EXT") != "1":
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rtdap._ckernels",
                sources=["src/rtdap/_ckernels.pyx"],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
