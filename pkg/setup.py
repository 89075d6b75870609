#!/usr/bin/env python3
"""
Setup script for the RMA toolkit
"""

from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="rma-toolkit",
    version="1.0.0",
    author="RMA Toolkit Contributors",
    description="Analysis, simulation and design of random multiple access with per-group latency and reliability targets",
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=[
        "rma_qos_model",
        "rma_andor_analyzer",
        "rma_sic_simulator",
        "rma_probe_designer",
        "rma_frame_dynamics",
        "rma_cli",
        "verify_installation",
    ],
    entry_points={
        "console_scripts": [
            "rma=rma_cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
        "Topic :: Communications",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        "test": ["pytest>=7.0"],
    },
    keywords="random-access, slotted-aloha, successive-interference-cancellation, density-evolution, iot",
)
