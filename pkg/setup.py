from setuptools import setup

setup(
   name='fedhpo',
   version='0.1.0',
   description='Federated hyperparameter transfer experiments at desk scale',
   author='Oliver Stanley',
   packages=['fedhpo', 'fedhpo.data'],
   install_requires=['wheel', 'numpy', 'pandas', 'scipy', 'scikit-learn', 'joblib'],
   entry_points={'console_scripts': ['fedhpo=fedhpo.cli:main']},
)
