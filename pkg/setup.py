from setuptools import setup
from typing import List

def lines(filename: str) -> List[str]:
    with open(filename, "r") as input:
        return input.readlines()

def version() -> str:
    with open("rawjpeg/__init__.py", "r") as input:
        for line in input:
            if line.startswith("__version__"):
                return line.split("=")[1].strip().strip('"')
    raise RuntimeError("Cannot find __version__ in rawjpeg/__init__.py")

setup(
    name='rawjpeg',
    version=version(),
    packages=['rawjpeg'],
    scripts=[],
    description='Store linear raw images in baseline JPEG files with an invertible, per-image adapter',
    long_description=open('README.md').read(),
    install_requires=lines("requirements.txt"),
    extras_require={
        "types": lines("requirements-types.txt"),
    },
    entry_points={
        'console_scripts': [
            'rawjpeg = rawjpeg.main:main',
        ],
    }
)
