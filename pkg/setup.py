from setuptools import setup, find_packages

setup(
    name="mpsr",
    version="0.1.0",
    description='Conditional Gibbs super-resolution with scattering features in PyTorch',
    author="Toshihiko Aoki",
    license='Apache License 2.0',
    packages=find_packages(exclude=['tests']),
    install_requires=['torch>=1.10',
                      'numpy',
                      'Pillow',
                      'tqdm'
                      ],
    extras_require={
        "develop": ['tensorboard'],
    },
    entry_points={
        'console_scripts': ['mpsr=mpsr.evalcli:main'],
    },
)
