from setuptools import setup, find_packages
# To use a consistent encoding
from codecs import open
from os import path

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()


setup(
    name='deskformer',
    version='0.1.0',

    description="Desk-scale multi-object tracking with a query-based transformer",

    long_description=long_description,
    long_description_content_type='text/markdown',

    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Framework :: Django :: 4.2',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Image Recognition',
    ],

    keywords='tracking transformer mot detection numpy django',

    # the apps live next to manage.py, as Django lays them out
    package_dir={'': 'deskformer'},
    packages=find_packages('deskformer', exclude=['tests']),

    python_requires='>=3.9',
    install_requires=[
        'django>=4.2,<5',
        'django-configurations',
        'numpy',
        'Pillow',
    ],
    scripts=['deskformer/manage.py'],
)
