from dataclasses import dataclass

from . import config

@dataclass
class Env:
    config: config.Config
    args: config.Args
