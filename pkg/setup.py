# -*- encoding: utf-8 *-*
import argparse
import os
import sys
import textwrap
from glob import glob

min_python = (3, 9)
my_python = sys.version_info

if my_python < min_python:
    print("intruder requires Python %d.%d or later" % min_python)
    sys.exit(1)

# numpy >= 1.22: Generator(PCG64) streams are stable from here on.
# scipy >= 1.7: special.log_softmax and stats.rankdata with ties='average'.
install_requires = ['numpy>=1.22', 'scipy>=1.7', ]

from setuptools import setup, find_packages, Command  # NOQA

with open('README.rst', 'r') as fd:
    long_description = fd.read()


class DocsCommand(Command):
    user_options = [
        ('output=', 'O', 'output directory'),
    ]

    def initialize_options(self):
        self.output = None

    def finalize_options(self):
        if self.output is None:
            self.output = 'docs'


class build_usage(DocsCommand):
    description = "generate docs/usage/<command>.rst.inc from the command line parser"

    def run(self):
        from intruder.cli import Analyzer
        parser = Analyzer(prog='intruder').parser
        commands = {}
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                commands.update(action.choices)
        target = os.path.join(self.output, 'usage')
        os.makedirs(target, exist_ok=True)
        for command, subparser in sorted(commands.items()):
            print('generating usage for %s' % command)
            with open(os.path.join(target, '%s.rst.inc' % command), 'w') as doc:
                doc.write(self.format_command(command, subparser))

    @staticmethod
    def format_command(command, subparser):
        title = 'intruder ' + command
        lines = ['.. _intruder_%s:' % command.replace('-', '_'), '', title, '-' * len(title), '::', '']
        usage = subparser.format_usage().replace('usage: ', '', 1).strip()
        lines.append(textwrap.indent(usage, '    '))
        for group in subparser._action_groups:
            actions = [a for a in group._group_actions if a.help != argparse.SUPPRESS]
            if not actions:
                continue
            lines += ['', group.title, '~' * len(group.title)]
            for action in actions:
                names = ', '.join(action.option_strings) or action.metavar or action.dest
                if action.option_strings and action.metavar:
                    names += ' ' + action.metavar
                lines.append('``%s``' % names)
                help = (action.help or '') % dict(vars(action), prog=title)
                lines.append(textwrap.indent(textwrap.dedent(help).strip(), '    '))
        description = subparser.epilog or subparser.description
        if description:
            lines += ['', 'Description', '~~~~~~~~~~~', textwrap.dedent(description).strip()]
        return '\n'.join(lines) + '\n'


class build_api(DocsCommand):
    description = "generate docs/api.rst listing every intruder module"

    def run(self):
        modules = sorted(path[len('src/'):-len('.py')].replace('/', '.') for path in glob('src/intruder/*.py'))
        with open(os.path.join(self.output, 'api.rst'), 'w') as doc:
            doc.write('\nAPI Documentation\n=================\n')
            for module in modules:
                if '._' in module:
                    continue
                print('documenting %s' % module)
                doc.write('\n.. automodule:: %s\n    :members:\n    :undoc-members:\n' % module)


setup(
    name='intruder-dims',
    use_scm_version={
        'write_to': 'src/intruder/_version.py',
        'fallback_version': '0.1.0',
    },
    description='Spectral diffing of fine-tuned checkpoints: intruder dimensions, interventions and a LoRA toy lab',
    long_description=long_description,
    license='BSD',
    platforms=['Linux', 'MacOS X', 'FreeBSD', ],
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    packages=find_packages('src'),
    package_dir={'': 'src'},
    package_data={'intruder.testsuite': ['golden/*']},
    include_package_data=True,
    zip_safe=False,
    entry_points={
        'console_scripts': [
            'intruder = intruder.cli:main',
        ]
    },
    cmdclass={
        'build_api': build_api,
        'build_usage': build_usage,
    },
    setup_requires=['setuptools_scm>=4.1'],
    install_requires=install_requires,
)
