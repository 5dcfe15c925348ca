from setuptools import find_packages, setup

setup(
    name="serocontact",
    version="0.1.0",
    description="Age-dependent transmission rates and R0 from serological and social contact data",
    packages=find_packages(include=["serocontact", "serocontact.*"]),
    python_requires=">=3.10",
    install_requires=[
        "click>=8.1",
        "numpy>=1.26",
        "orjson>=3.9",
        "pandas>=2.1",
        "pydantic>=2.5",
        "pydantic-settings>=2.1",
        "python-dotenv>=1.0",
        "PyYAML>=6.0",
        "scipy>=1.11",
        "tqdm>=4.66",
    ],
    entry_points={"console_scripts": ["serocontact = serocontact.main:cli"]},
)
