#!/usr/bin/env python

from setuptools import setup

setup(
    name="webweave",
    version="0.1.0",
    description="Simulators and Monte Carlo diagnostics for coalescing random walks and the Brownian web",
    classifiers=["Programming Language :: Python :: 3 :: Only"],
    python_requires=">=3.9",
    install_requires=[
        "singer-python~=5.13",
        # singer-python pins the jsonschema release the config validator runs on
        "jsonschema",
        "numpy>=1.22",
        "scipy>=1.8",
    ],
    extras_require={
        "dev": [
            "pytest",
            "hypothesis",
        ]
    },
    entry_points="""
          [console_scripts]
          webweave=webweave:main
      """,
    packages=["webweave", "webweave.web"],
    package_data={
        "webweave": [
            "schemas/*.json",
        ]
    },
    include_package_data=True,
)
