# -*- coding: utf-8 -*-
import math
import os
from collections import defaultdict
from configparser import ConfigParser

from asdl import utils
from asdl.exceptions import ConfigError, NotFound

PRESETS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'presets')


class AsdlConfig(ConfigParser):
    """ asdl configuration object. Settings are stored in INI files and can be overridden
        by environment variables named ``ASDL_<SECTION>_<NAME>``. When several paths are
        given they are read in order, so later files override earlier ones. See the
        documentation section 'Configuration' for more details on available options.

        Parameters:
            paths (str): Paths of the configuration files to load (missing files are ignored).
            envprefix (str): Prefix of the environment variables that override file values.
    """

    def __init__(self, *paths, envprefix='ASDL'):
        ConfigParser.__init__(self, interpolation=None)
        self.envprefix = envprefix
        self.paths = [p for p in paths if p]
        self.read(self.paths)
        self.data = self._asDict()

    def get(self, key, default=None, cast=None):
        """ Returns the specified configuration value or <default> if not found.

            Parameters:
                key (str): Configuration variable to load in the format '<section>.<variable>'.
                default: Default value to use if key not found.
                cast (func): Cast the value to the specified type before returning.

            Raises:
                :exc:`~asdl.exceptions.ConfigError`: The value cannot be cast to <cast>.
        """
        try:
            # First: check environment variable is set
            envkey = f"{self.envprefix}_{key.upper().replace('.', '_')}"
            value = os.environ.get(envkey)
            if value is None:
                # Second: check the config file has attr
                section, name = key.lower().split('.')
                value = self.data.get(section, {}).get(name, default)
            if value == '' and default is not None:
                value = default
        except:  # noqa: E722
            return default
        return self._cast(key, cast, value) if cast else value

    def getList(self, key, default=None, itemcast=None):
        """ Returns a comma separated configuration value as a list.

            Parameters:
                key (str): Configuration variable in the format '<section>.<variable>'.
                default (list): Value to return when the key is not set.
                itemcast (func): Cast applied to every item (default str).
        """
        value = self.get(key)
        if value is None or value == '':
            return default
        if isinstance(value, (list, tuple)):
            return list(value)
        return utils.toList(value, itemcast=lambda v: self._cast(key, itemcast or str, v.strip()))

    def _cast(self, key, func, value):
        try:
            result = utils.cast(func, value)
        except (TypeError, ValueError):
            result = math.nan
        if isinstance(result, float) and math.isnan(result) and str(value).strip().lower() != 'nan':
            raise ConfigError(f'{key} = {value} is not a valid {func.__name__}')
        return result

    def setValue(self, key, value):
        """ Sets an in-memory value. Only used when building configs programmatically. """
        section, name = key.lower().split('.')
        self.data.setdefault(section, {})[name] = str(value)

    def asDict(self):
        """ Returns a copy of all values (files only, environment overrides excluded). """
        return {s: dict(v) for s, v in self.data.items()}

    def _asDict(self):
        """ Returns all configuration values as a dictionary. """
        config = defaultdict(dict)
        for section in self._sections:
            for name, value in self._sections[section].items():
                if name != '__name__':
                    config[section.lower()][name.lower()] = value
        return dict(config)


def presetPath(name):
    """ Returns the path of the named preset shipped in ``asdl/presets``.

        Raises:
            :exc:`~asdl.exceptions.NotFound`: Unknown preset name.
    """
    if os.path.isfile(name):
        return name
    path = os.path.join(PRESETS_DIR, f'{name}.ini')
    if not os.path.isfile(path):
        available = ', '.join(sorted(f[:-4] for f in os.listdir(PRESETS_DIR) if f.endswith('.ini')))
        raise NotFound(f'Unknown preset: {name} (available: {available})')
    return path


def loadConfig(path=None, preset=None):
    """ Loads an experiment configuration. The chain of presets named by ``[experiment] preset``
        is resolved first so that each file only needs to list its differences.

        Parameters:
            path (str): User config file (optional).
            preset (str): Preset to start from when the user file does not name one.
    """
    chain = [path] if path else []
    name = preset
    if path:
        name = AsdlConfig(path).get('experiment.preset', preset)
    seen = set()
    while name and name not in seen:
        seen.add(name)
        presetfile = presetPath(name)
        chain.insert(0, presetfile)
        name = AsdlConfig(presetfile).data.get('experiment', {}).get('preset')
    return AsdlConfig(*chain)
