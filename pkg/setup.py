from setuptools import setup


def readme():
    with open('README.rst') as readme_file:
        return readme_file.read()

def requirements():
    # The dependencies are the same as the contents of requirements.txt
    with open('requirements.txt') as f:
        return [line.strip() for line in f if line.strip()]

configuration = {
    'name': 'shaqlab',
    'version': '0.1.0',
    'description': 'Markov Shapley values and tabular Shapley Q-learning',
    'long_description': readme(),
    'classifiers': [
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Intended Audience :: Developers',
        'License :: OSI Approved',
        'Programming Language :: Python',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Operating System :: Microsoft :: Windows',
        'Operating System :: POSIX',
        'Operating System :: Unix',
        'Operating System :: MacOS',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],
    'keywords': 'shapley value multi-agent reinforcement learning credit assignment',
    'license': 'BSD',
    'packages': ['shaqlab', 'shaqlab.tests'],
    'python_requires': '>=3.8',
    'install_requires': requirements(),
    'extras_require': {'tests': ['pytest', 'hypothesis']},
    'entry_points': {'console_scripts': ['shaqlab=shaqlab.harness:main']},
}

setup(**configuration)
