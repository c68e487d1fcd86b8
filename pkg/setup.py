from setuptools import setup, find_packages

setup(
    name="composite-skill-learning",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "tenacity",
    ],
    extras_require={
        "dev": ["pytest", "pytest-cov", "ruff"],
    },
    entry_points={
        "console_scripts": [
            "composite-learning=composite_learning.cli:main",
        ],
    },
    setup_requires=["setuptools>=42", "wheel"],
    description="Composite skill learning with adaptive Petri nets and GPR policies",
    python_requires=">=3.9",
)
