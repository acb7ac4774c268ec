#!/usr/bin/env python

from setuptools import setup
import subprocess
from pathlib import Path

HERE = Path(__file__).resolve().parent
VERSION = '0.1.0'


def git(*args):
    return subprocess.check_output(["git", *args], cwd=HERE).decode("utf-8")


def write_version_file(version):
    """ Record the version and git state in src/.version

    A shipped .version file is reused when git is unavailable (for
    example when building from an sdist).

    Returns
    -------
    str
        The version file name, relative to the package directory
    """
    version_file = HERE / "src" / ".version"
    try:
        commit = git("log", "-1", "--pretty=%h %ai").strip()
        dirty = git("diff", ".") + git("diff", "--cached", ".")
    except (subprocess.CalledProcessError, FileNotFoundError) as exc:
        if version_file.is_file():
            return version_file.name
        raise RuntimeError(
            f"No git information and no {version_file} to fall back on") from exc

    state = "UNCLEAN" if dirty else "CLEAN"
    version_file.write_text(f"{version}: ({state}) {commit}\n")
    print(f"wrote {version_file}")
    return version_file.name


setup(name='lockweaver',
      description='Proof-guided lock synthesis for concurrent libraries',
      long_description=(HERE / "README.md").read_text(),
      long_description_content_type="text/markdown",
      license="MIT",
      version=VERSION,
      packages=['lockweaver'],
      package_dir={'lockweaver': 'src'},
      package_data={'lockweaver': [write_version_file(VERSION)]},
      python_requires='>=3.8',
      install_requires=['lark', 'networkx', 'numpy', 'pandas', 'tqdm'],
      extras_require={'test': ['hypothesis']},
      entry_points={'console_scripts': [
          'lockweaver=lockweaver.cli:main',
          'lockweaver_report=lockweaver.report:main',
      ]},
      classifiers=[
          "Programming Language :: Python :: 3",
          "License :: OSI Approved :: MIT License",
          "Operating System :: OS Independent"])
