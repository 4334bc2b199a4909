from setuptools import setup, find_packages

setup(
    name='vcmoe',
    version='0.1.0',
    packages=find_packages(include=["vcmoe", "vcmoe.*"]),
    install_requires=[
        'numpy==2.2.3',
        'scipy',
        'pandas',
        'joblib',
    ],
    extras_require={
        'test': ['pytest', 'hypothesis'],
    },
    entry_points={
        'console_scripts': ['vcmoe=vcmoe.cli:main'],
    },
    description='Varying-coefficient mixture of experts: label-consistent EM, bandwidth selection, '
                'simultaneous confidence bands and constancy tests',
)
