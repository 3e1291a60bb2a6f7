#!/usr/bin/env python3
"""
Setup script for lic-codec, a learned image codec with int8 hyper-synthesis
and latency-constrained channel search.
"""

from pathlib import Path

from setuptools import setup

this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text(encoding="utf-8")

# Runtime requirements live in requirements.txt; comments are stripped here.
requirements = []
requirements_file = this_directory / "requirements.txt"
if requirements_file.exists():
    with open(requirements_file, "r", encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                requirements.append(line)

MODULES = sorted(p.stem for p in (this_directory / "lic_codec").glob("*.py"))
VERSION = "0.4.0"

setup(
    name="lic-codec",
    version=VERSION,
    author="LIC Codec Team",
    description="Learned image codec with an int8 hyper-synthesis path and latency-constrained channel search",
    long_description=long_description,
    long_description_content_type="text/markdown",
    package_dir={"": "lic_codec"},
    py_modules=MODULES,
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Image Processing",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "lic-codec=cli:main",
        ],
    },
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "pytest-timeout>=2.1.0",
            "flake8>=6.0.0",
            "black>=23.0.0",
            "isort>=5.12.0",
            "mypy>=1.5.0",
        ],
    },
    zip_safe=False,
)
