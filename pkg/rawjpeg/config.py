import argparse
import os
from configparser import ConfigParser, SectionProxy, Error as ConfigParserError
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Union

from . import __version__
from . import parser as p
from .fitter import FitConfig, LossWeights, Schedule, Simulator, FitConfigError
from .image import RawFormat
from .transform import ColorTransform, ParamsValidationError

THREADS_VARIABLE = "RJA_THREADS"

class ConfigException(Exception):
    pass

class ConfigFileNotFoundError(ConfigException):
    pass

class ConfigNotFound(ConfigException):
    pass

class ConfigValueError(ConfigException):
    pass

@dataclass
class Args:
    command: str
    args: List[str]
    config: Optional[str]
    quality: Optional[int]
    preset: Optional[str]
    fit: bool
    no_dct: bool
    iterations: Optional[int]
    thumbnail: Optional[int]
    seed: Optional[int]
    csv: Optional[str]
    format: Optional[str]
    black_level: Optional[float]
    white_level: Optional[float]
    qualities: str
    width: int
    height: int
    profile: str
    verbose: bool

    @property
    def raw_format(self) -> Optional[RawFormat]:
        return RawFormat(self.format) if self.format is not None else None

def build_arg_parser(command_help: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rawjpeg",
        description="Store linear raw images in baseline JPEG files with an invertible adapter",
        epilog=f"commands:\n{command_help}",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", type=str, help="Command to run")
    parser.add_argument("args", type=str, nargs="*", help="Command arguments (paths, corpus spec)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=str, default=None,
                        help="Fit configuration file ([fit] and [color] sections)")
    parser.add_argument("--quality", type=int, default=None, help="JPEG quality 1..100 (default 50)")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--preset", type=str, default=None,
                      help="Fixed parameters instead of fitting: identity, gamma2.2 (any gammaX) or srgb")
    mode.add_argument("--fit", action="store_true", help="Fit parameters per image (the default)")
    parser.add_argument("--no-dct", action="store_true", help="Fit without DCT scaling")
    parser.add_argument("--iterations", type=int, default=None, help="Fit iterations")
    parser.add_argument("--thumbnail", type=int, default=None, help="Fit thumbnail side, a power of two")
    parser.add_argument("--seed", type=int, default=None, help="Fit and synthesis seed")
    parser.add_argument("--csv", type=str, default=None, help="Write metrics as CSV to this path")
    parser.add_argument("--format", type=str, default=None, choices=[f.value for f in RawFormat],
                        help="Raw file format; by default taken from the file name")
    parser.add_argument("--black-level", type=float, default=None, help="Sensor black level in counts")
    parser.add_argument("--white-level", type=float, default=None, help="Sensor white level in counts")
    parser.add_argument("--qualities", type=str, default="25,50,75,95", help="Bench quality list")
    parser.add_argument("--width", type=int, default=512, help="Synthetic image width")
    parser.add_argument("--height", type=int, default=512, help="Synthetic image height")
    parser.add_argument("--profile", type=str, default="default", help="Synthetic image profile")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser

def get_args(command_help: str, argv: Optional[List[str]] = None) -> Args:
    namespace = build_arg_parser(command_help).parse_intermixed_args(argv)
    return Args(**vars(namespace))

class Section:
    section_name: str
    section: SectionProxy

    def __init__(self, section_name: str, section: SectionProxy):
        self.section_name = section_name
        self.section = section

    def get(self,
            key: str,
            fallback: Optional[str] = None,
            empty_is_none: bool = True) -> str:
        found = key in self.section
        value = self.section[key] if found else fallback
        if value is None or (empty_is_none and value == ""):
            if found:
                raise ConfigNotFound(f"Empty value not permitted for {self.section_name}.{key} in config")
            else:
                raise ConfigNotFound(f"Cannot find {self.section_name}.{key} in config")
        return value

    def has(self, key: str) -> bool:
        return key in self.section

    def parsed(self, key: str, parser: p.Parser[p.T]) -> p.T:
        """The value of key parsed as whitespace-separated words"""
        value = self.get(key)
        try:
            return p.parse_all(parser, value.split())
        except ValueError as exn:
            raise ConfigValueError(f"Invalid value for {self.section_name}.{key}: {exn}") from exn

    def __getitem__(self, key: str) -> str:
        return self.get(key)

class Config:
    filename: Optional[str]
    _config: ConfigParser

    def __init__(self,
                 filename: Optional[str],
                 config_dict: Union[Dict[str, Dict[str, str]], None] = None) -> None:
        self.filename = filename
        self._config = ConfigParser()
        try:
            if config_dict is not None:
                self._config.read_dict(config_dict)
            elif filename is not None:
                if not self._config.read(filename):
                    raise ConfigFileNotFoundError(f"Cannot open config file {filename}")
        except ConfigParserError as exn:
            raise ConfigValueError(f"Cannot parse config file {filename}: {exn}") from exn

    def __getitem__(self, section: str) -> Section:
        return Section(section, self._config[section])

    def has_section(self, key: str) -> bool:
        return self._config.has_section(key)

    def get(self, section: str, key: str,
            fallback: Optional[str] = None,
            empty_is_none: bool = True) -> str:
        return Section(section, self._config[section]).get(key, fallback=fallback, empty_is_none=empty_is_none)

def fit_config(config: Config, args: Optional[Args] = None) -> FitConfig:
    """Defaults, overridden by the [fit] section, overridden by command line flags"""
    values: Dict[str, object] = {}
    weights = LossWeights()
    if config.has_section("fit"):
        section = config["fit"]
        integers = ["quality", "iterations", "thumbnail", "seed", "fourier_terms", "log_every"]
        floats = ["step_size", "weight_decay", "min_step_size"]
        booleans = ["use_dct", "learn_gamma", "learn_lut"]
        for key in integers:
            if section.has(key):
                values[key] = section.parsed(key, p.Int())
        for key in floats:
            if section.has(key):
                values[key] = section.parsed(key, p.Float())
        for key in booleans:
            if section.has(key):
                values[key] = section.parsed(key, p.Bool())
        if section.has("schedule"):
            values["schedule"] = section.parsed("schedule", p.OneOfEnumValue(Schedule))
        if section.has("simulator"):
            values["simulator"] = section.parsed("simulator", p.OneOfEnumValue(Simulator))
        default_decays = FitConfig().moment_decays
        beta1 = section.parsed("beta1", p.Float()) if section.has("beta1") else default_decays[0]
        beta2 = section.parsed("beta2", p.Float()) if section.has("beta2") else default_decays[1]
        values["moment_decays"] = (beta1, beta2)
        weights = LossWeights(
            l1=section.parsed("lambda_l1", p.Float()) if section.has("lambda_l1") else weights.l1,
            ssim=section.parsed("lambda_ssim", p.Float()) if section.has("lambda_ssim") else weights.ssim,
            fft=section.parsed("lambda_fft", p.Float()) if section.has("lambda_fft") else weights.fft)
    if args is not None:
        if args.quality is not None:
            values["quality"] = args.quality
        if args.no_dct:
            values["use_dct"] = False
        if args.iterations is not None:
            values["iterations"] = args.iterations
        if args.thumbnail is not None:
            values["thumbnail"] = args.thumbnail
        if args.seed is not None:
            values["seed"] = args.seed
    try:
        return replace(FitConfig(), loss_weights=weights, **values)
    except FitConfigError as exn:
        raise ConfigValueError(f"Invalid fit configuration: {exn}") from exn

def color_override(config: Config, base: ColorTransform) -> ColorTransform:
    """base with any [color] values from the config file substituted"""
    if not config.has_section("color"):
        return base
    section = config["color"]
    gains = section.parsed("gains", p.List_(p.Float())) if section.has("gains") else base.gains.tolist()
    ccm = section.parsed("ccm", p.List_(p.Float())) if section.has("ccm") else base.ccm.flatten().tolist()
    gamma = section.parsed("gamma", p.Float()) if section.has("gamma") else base.gamma
    if len(gains) != 3 or len(ccm) != 9:
        raise ConfigValueError(f"color.gains needs 3 values and color.ccm 9, got {len(gains)} and {len(ccm)}")
    try:
        return ColorTransform(gains=gains, ccm=[ccm[0:3], ccm[3:6], ccm[6:9]], gamma=gamma)
    except ParamsValidationError as exn:
        raise ConfigValueError(f"Invalid [color] section: {exn}") from exn

def thread_limit(environ: Optional[Dict[str, str]] = None) -> int:
    environ = dict(os.environ) if environ is None else environ
    value = environ.get(THREADS_VARIABLE)
    if value is None or value == "":
        return max(1, os.cpu_count() or 1)
    try:
        threads = p.parse_all(p.Int(), [value])
    except ValueError as exn:
        raise ConfigValueError(f"{THREADS_VARIABLE} must be a positive integer, got {value!r}") from exn
    if threads < 1:
        raise ConfigValueError(f"{THREADS_VARIABLE} must be a positive integer, got {value!r}")
    return threads
