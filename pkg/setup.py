import re
import subprocess

from setuptools import setup


def read_version():
    with open("pocco/__init__.py") as f:
        match = re.search(r'^__version__\s*=\s*[\'"]([^\'"]*)[\'"]', f.read(), re.MULTILINE)
    if match is None or not match.group(1):
        raise RuntimeError("version is not set")

    version = match.group(1)
    if version.endswith(("a", "b", "rc")):
        # pre-releases carry the commit count and short hash
        try:
            count = subprocess.run(["git", "rev-list", "--count", "HEAD"], capture_output=True, text=True).stdout.strip()
            commit = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True).stdout.strip()
        except OSError:
            return version
        if count:
            version += count
        if commit:
            version += "+g" + commit
    return version


with open("requirements.txt") as f:
    requirements = [line for line in f.read().splitlines() if line and not line.startswith("#")]

with open("README.md") as f:
    readme = f.read()

setup(
    name="pocco",
    version=read_version(),
    packages=["pocco", "pocco.core", "pocco.models", "pocco.nn", "pocco.types"],
    description="Preference-trained conditional-computation solvers for multi-objective routing and packing",
    long_description=readme,
    long_description_content_type="text/markdown",
    install_requires=requirements,
    extras_require={
        "speedups": ["ujson"],
        "test": ["pytest>=7.0"],
    },
    entry_points={"console_scripts": ["pocco = pocco.cli:main"]},
    python_requires=">=3.8",
    classifiers=[
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Programming Language :: Python :: 3",
    ],
)
