import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="yoloret",
    version="0.1.0",
    description="Lightweight one-stage object detector for edge devices: "
    "truncated MobileNetV2 backbone, receptive-field feature fusion, PANet-lite neck",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(),
    include_package_data=True,
    python_requires=">=3.7",
    classifiers=(
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "License :: OSI Approved :: MIT License",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Intended Audience :: Science/Research",
    ),
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "click",
        "colorlog",
        "tqdm",
    ],
    extras_require={
        # compiled NMS inner loop; a pure numpy/python path is used without it
        "fast": ["numba"],
    },
    entry_points={
        "console_scripts": [
            "yoloret=yoloret.scripts.cli:cli",
        ],
    },
    zip_safe=False,
)
