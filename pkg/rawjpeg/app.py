import csv
import os
import sys
from typing import List, Optional, TextIO, Tuple

from . import commands as c
from . import parser as p
from . import log
from .bench import BenchException, CorpusSpecError, EmptyCorpusError, default_methods, load_corpus, parse_qualities, run_bench
from .config import (ConfigException, ConfigFileNotFoundError, color_override, fit_config, thread_limit,
                     ConfigValueError)
from .container import (ContainerException, MarkerParseError, CodecError, scan_markers, adapter_payloads,
                        extract_com, is_adapter_segment)
from .env import Env
from .fitter import (FitException, FitDivergedError, FixedGammaPreset, IdentityPreset, Preset, SrgbPreset,
                     estimate_color_transform, fit_with_trace, preset)
from .image import (ImageException, ImageReadError, ImageWriteError, ImageFormatError, NormalizationSpec,
                    PROFILES, RawImage, load_raw, png16_bytes, save_raw, synth_raw)
from .jpegsim import SimulatorException
from .metrics import MetricsException, ReportRow, evaluate, format_report_table, write_csv, row_cells
from .paramcodec import PayloadException, PayloadFormatError, UnsupportedVersionError, describe_payload
from .pipeline import encode_raw, decode_raw
from .transform import AdapterParams, TransformException
from .utils import format_table, get_optional

logger = log.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_VALIDATION = 5

def exit_code_for(exn: BaseException) -> int:
    if isinstance(exn, c.CommandsException):
        return EXIT_USAGE
    if isinstance(exn, (ImageReadError, ImageWriteError, ConfigFileNotFoundError, OSError)):
        return EXIT_IO
    if isinstance(exn, (PayloadFormatError, UnsupportedVersionError, MarkerParseError, CodecError,
                        ImageFormatError, CorpusSpecError)):
        return EXIT_PARSE
    if isinstance(exn, FitDivergedError):
        return EXIT_UNEXPECTED
    if isinstance(exn, (PayloadException, ContainerException, FitException, ConfigException,
                        ImageException, SimulatorException, MetricsException, TransformException,
                        EmptyCorpusError, BenchException)):
        return EXIT_VALIDATION
    return EXIT_UNEXPECTED

def _preset_kind(groups: Tuple[Optional[str], ...]) -> str:
    return get_optional(groups[0], "")

def preset_name_parser() -> p.Parser[str]:
    return p.Map(_preset_kind, p.Regex(r"(identity|srgb|gamma[0-9]+(?:\.[0-9]*)?)"))

def two_paths() -> p.Parser[Tuple[str, str]]:
    return p.Adjacent(p.AnyStr(), p.AnyStr())

class App:
    env: Env
    out: TextIO
    _commands: c.Commands["App"]

    def __init__(self, env: Env, out: Optional[TextIO] = None) -> None:
        self.env = env
        self.out = get_optional(out, sys.stdout)
        self._commands = App.commands()

    @staticmethod
    def commands() -> c.Commands["App"]:
        """The registry; also used for --help before any configuration is read"""
        commands: c.Commands["App"] = c.Commands()
        commands.register(c.Function("encode", "encode RAW OUT.jpg - adapt, JPEG-encode and embed parameters",
                                     two_paths(), App._command_encode))
        commands.register(c.Function("decode", "decode IN.jpg OUT_RAW - decode and invert the adapter",
                                     two_paths(), App._command_decode))
        commands.register(c.Function("eval", "eval RAW IN.jpg - metrics of the decoded file against the raw",
                                     two_paths(), App._command_eval))
        commands.register(c.Function("inspect", "inspect IN.jpg - marker map and payload summary",
                                     p.AnyStr(), App._command_inspect))
        commands.register(c.Function("synth", "synth OUT_RAW - write a synthetic raw image",
                                     p.AnyStr(), App._command_synth))
        commands.register(c.Function("bench", "bench DIR|synth:N:WxH[:seed=n][:profile=name] - corpus benchmark",
                                     p.AnyStr(), App._command_bench))
        return commands

    def run(self, invocation: c.Invocation) -> None:
        self._commands.invoke(self, invocation)

    def _command_encode(self, args: Tuple[str, str]) -> None:
        self.cmd_encode(*args)

    def _command_decode(self, args: Tuple[str, str]) -> None:
        self.cmd_decode(*args)

    def _command_eval(self, args: Tuple[str, str]) -> None:
        self.cmd_eval(*args)

    def _command_inspect(self, jpeg_path: str) -> None:
        self.cmd_inspect(jpeg_path)

    def _command_synth(self, out_path: str) -> None:
        self.cmd_synth(out_path)

    def _command_bench(self, source: str) -> None:
        self.cmd_bench(source)

    def emit(self, text: str) -> None:
        print(text, file=self.out)

    def normalization(self) -> Optional[NormalizationSpec]:
        args = self.env.args
        if args.black_level is None and args.white_level is None:
            return None
        if args.white_level is None:
            raise ConfigValueError("--black-level requires --white-level")
        return NormalizationSpec(black_level=get_optional(args.black_level, 0.0),
                                 white_level=args.white_level)

    def load(self, path: str) -> RawImage:
        return load_raw(path, self.env.args.raw_format, self.normalization())

    def preset_for(self, name: str, img: RawImage) -> Preset:
        try:
            kind = p.parse_all(preset_name_parser(), [name])
        except ValueError as exn:
            raise ConfigValueError(f"Unknown preset {name!r}, expected identity, gammaX or srgb") from exn
        if kind == "identity":
            return IdentityPreset()
        if kind == "srgb":
            return SrgbPreset(color_override(self.env.config, estimate_color_transform(img)))
        return FixedGammaPreset(float(kind[len("gamma"):]))

    def cmd_encode(self, raw_path: str, out_path: str) -> None:
        img = self.load(raw_path)
        cfg = fit_config(self.env.config, self.env.args)
        trace: Optional[List[float]] = None
        if self.env.args.preset is not None:
            params: AdapterParams = preset(self.preset_for(self.env.args.preset, img), use_dct=False)
        else:
            result = fit_with_trace(img, cfg)
            params = result.params
            trace = result.losses
        encoded = encode_raw(img, params, cfg.quality)
        write_bytes(out_path, encoded.jpeg)
        self.emit(f"{out_path}: {len(encoded.jpeg)} bytes, payload {encoded.payload.size} bytes, Q={cfg.quality}")
        if trace is not None:
            self.emit(f"fit: {len(trace) - 1} iterations, loss {trace[0]:.6f} -> {min(trace):.6f}")

    def cmd_decode(self, jpeg_path: str, out_path: str) -> None:
        decoded = decode_raw(read_bytes(jpeg_path))
        save_raw(decoded.image, out_path, self.env.args.raw_format)
        source = "adapter" if decoded.params is not None else "plain JPEG"
        self.emit(f"{out_path}: {decoded.image.width}x{decoded.image.height} ({source})")

    def cmd_eval(self, raw_path: str, jpeg_path: str) -> None:
        original = self.load(raw_path)
        jpeg = read_bytes(jpeg_path)
        decoded = decode_raw(jpeg)
        report = evaluate(original, decoded.image, len(jpeg), len(png16_bytes(original)))
        row = ReportRow(label=os.path.basename(jpeg_path),
                        method="adapter" if decoded.params is not None else "jpeg",
                        quality=None, report=report)
        self.emit(format_report_table([row]))
        if self.env.args.csv is not None:
            append_csv(self.env.args.csv, [row])

    def cmd_inspect(self, jpeg_path: str) -> None:
        data = read_bytes(jpeg_path)
        segments = scan_markers(data)
        self.emit(format_table(["offset", "marker", "length", "payload"],
                               [[str(segment.offset), segment.name, str(segment.length),
                                 "adapter" if is_adapter_segment(segment) else ""] for segment in segments]))
        payloads = adapter_payloads(data)
        first = extract_com(data)
        if first is None:
            self.emit("no adapter payload")
            return
        self.emit(describe_payload(first).summary())
        if len(payloads) > 1:
            self.emit(f"{len(payloads) - 1} further adapter payloads ignored")

    def cmd_synth(self, out_path: str) -> None:
        args = self.env.args
        if args.profile not in PROFILES:
            raise ConfigValueError(f"Unknown profile {args.profile}, expected one of {', '.join(PROFILES)}")
        img = synth_raw(get_optional(args.seed, 0), args.width, args.height, PROFILES[args.profile])
        save_raw(img, out_path, args.raw_format)
        self.emit(f"{out_path}: {img.width}x{img.height} synthetic raw, profile {args.profile}")

    def cmd_bench(self, source: str) -> None:
        qualities = parse_qualities(self.env.args.qualities)
        corpus = load_corpus(source, self.normalization(), self.env.args.raw_format)
        cfg = fit_config(self.env.config, self.env.args)
        methods = default_methods(cfg, lambda color: color_override(self.env.config, color))
        result = run_bench(corpus, qualities, methods, threads=thread_limit())
        self.emit(format_report_table(result.means))
        if self.env.args.csv is not None:
            append_csv(self.env.args.csv, result.means)

def read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as file:
            return file.read()
    except OSError as exn:
        raise ImageReadError(f"Cannot read {path}: {exn}") from exn

def write_bytes(path: str, contents: bytes) -> None:
    try:
        with open(path, "wb") as file:
            file.write(contents)
    except OSError as exn:
        raise ImageWriteError(f"Cannot write {path}: {exn}") from exn

def append_csv(path: str, rows: List[ReportRow]) -> None:
    """Appends rows; the header is written only when the file is new or empty"""
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    try:
        with open(path, "a", newline="") as stream:
            if new_file:
                write_csv(rows, stream)
            else:
                writer = csv.writer(stream, lineterminator="\n")
                for row in rows:
                    writer.writerow(row_cells(row))
    except OSError as exn:
        raise ImageWriteError(f"Cannot write {path}: {exn}") from exn
