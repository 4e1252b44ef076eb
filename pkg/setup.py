from setuptools import setup, find_packages

setup(
    name="ionlink",
    version="1.0.0",
    packages=find_packages(exclude=["test", "test.*", "examples", "examples.*"]),
    install_requires=[
        "numpy>=1.24.3",
        "networkx>=3.1",
        "pymatching>=2.1.0",
        "psutil>=5.8.0",
    ],
    extras_require={
        "test": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
        ],
    },
    entry_points={
        'console_scripts': [
            'ionlink=ionlink.cli:run',
        ],
    },
    python_requires=">=3.9",
    description="Entanglement purification, repeater chains and toric-code thresholds for modular ion-trap networks",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    author="ionlink Team",
    author_email="",
    url="",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    keywords="quantum-networks, entanglement-purification, quantum-repeater, toric-code, matching",
)
