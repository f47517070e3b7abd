from setuptools import setup, find_packages

setup(
    name="rouser_snn",
    version="0.1",
    packages=find_packages(include=["src", "src.*"]),
    install_requires=[
        "numpy",
        "pandas",
        "python-dotenv",
        "tqdm",
    ],
    entry_points={
        "console_scripts": ["rouser=src.rouser_pipeline:main"],
    },
)
