"""Corpus benchmark: every method at every quality over a set of raw images

The corpus is either a directory of .png/.pfm raws or a synthetic spec of the form
synth:<count>:<W>x<H>[:seed=<n>][:profile=<name>].
"""
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple

from . import log
from . import parser as p
from .container import encode_jpeg, decode_jpeg
from .fitter import (FitConfig, FixedGammaPreset, SrgbPreset, SRGB_GAMMA,
                     estimate_color_transform, fit, preset)
from .image import (RawImage, RawFormat, NormalizationSpec, PROFILES, SynthProfile,
                    load_raw, png16_bytes, synth_corpus)
from .metrics import MetricsReport, ReportRow, evaluate, mean_report
from .pipeline import encode_raw, decode_raw
from .transform import AdapterParams, ColorTransform
from .workers import map_in_threads

logger = log.getLogger(__name__)

DEFAULT_QUALITIES = [25, 50, 75, 95]

class BenchException(Exception):
    pass

class CorpusSpecError(BenchException):
    pass

class EmptyCorpusError(BenchException):
    pass

@dataclass
class SynthSpec:
    count: int
    width: int
    height: int
    seed: int = 0
    profile: str = "default"

def _size(groups: Tuple[Optional[str], ...]) -> Tuple[int, int]:
    width, height = int(groups[0] or 0), int(groups[1] or 0)
    if width < 1 or height < 1:
        raise ValueError(f"Invalid image size {width}x{height}")
    return width, height

def _profile(groups: Tuple[Optional[str], ...]) -> str:
    name = groups[0] or ""
    if name not in PROFILES:
        raise ValueError(f"Unknown profile {name}, expected one of {', '.join(PROFILES)}")
    return name

def _positive(value: int) -> int:
    if value < 1:
        raise ValueError(f"Image count must be positive, got {value}")
    return value

def _synth_spec(parsed: Tuple[int, Tuple[Tuple[int, int], Tuple[Optional[int], Optional[str]]]]) -> SynthSpec:
    count, ((width, height), (seed, profile)) = parsed
    return SynthSpec(count=count, width=width, height=height,
                     seed=0 if seed is None else seed,
                     profile="default" if profile is None else profile)

def synth_spec_parser() -> p.Parser[SynthSpec]:
    options = p.SomeOf(p.Map(lambda groups: int(groups[0] or 0), p.Regex(r"seed=([0-9]+)")),
                       p.Map(_profile, p.Regex(r"profile=(\w+)")))
    body = p.Adjacent(p.Map(_positive, p.Int()),
                      p.Adjacent(p.Map(_size, p.Regex(r"([0-9]+)x([0-9]+)")), options))
    return p.Split(":", p.Map(_synth_spec, p.Keyword("synth", body)))

def quality_list_parser() -> p.Parser[List[int]]:
    def check(qualities: List[int]) -> List[int]:
        if not qualities:
            raise ValueError("Empty quality list")
        for quality in qualities:
            if not 1 <= quality <= 100:
                raise ValueError(f"Quality must be in [1, 100], got {quality}")
        return qualities
    return p.Split(",", p.Map(check, p.List_(p.Int())))

def parse_synth_spec(text: str) -> SynthSpec:
    try:
        return p.parse_all(synth_spec_parser(), [text])
    except ValueError as exn:
        raise CorpusSpecError(f"Invalid corpus spec {text!r}: {exn}") from exn

def parse_qualities(text: str) -> List[int]:
    try:
        return p.parse_all(quality_list_parser(), [text])
    except ValueError as exn:
        raise CorpusSpecError(f"Invalid quality list {text!r}: {exn}") from exn

@dataclass
class CorpusImage:
    label: str
    image: RawImage

def load_corpus(source: str,
                normalization: Optional[NormalizationSpec] = None,
                format: Optional[RawFormat] = None) -> List[CorpusImage]:
    """A directory of raws, or a synthetic corpus when source starts with synth:"""
    if source.startswith("synth:"):
        spec = parse_synth_spec(source)
        profile: SynthProfile = PROFILES[spec.profile]
        images = synth_corpus(spec.seed, spec.count, spec.width, spec.height, profile)
        corpus = [CorpusImage(label=f"synth-{spec.seed + index}", image=image)
                  for index, image in enumerate(images)]
    elif os.path.isdir(source):
        names = sorted(name for name in os.listdir(source)
                       if os.path.splitext(name)[1].lower() in (".png", ".pfm"))
        corpus = [CorpusImage(label=name,
                              image=load_raw(os.path.join(source, name), format, normalization))
                  for name in names]
    else:
        raise CorpusSpecError(f"{source} is neither a directory nor a synth: spec")
    if not corpus:
        raise EmptyCorpusError(f"No raw images found in {source}")
    logger.info(f"Corpus {source}: {len(corpus)} images")
    return corpus

class Method(ABC):
    name: str

    @abstractmethod
    def roundtrip(self, img: RawImage, quality: int) -> Tuple[RawImage, int]:
        """Reconstruction and stored file size"""
        pass

class PlainJpeg(Method):
    name = "jpeg"

    def roundtrip(self, img: RawImage, quality: int) -> Tuple[RawImage, int]:
        jpeg = encode_jpeg(img, quality)
        return decode_jpeg(jpeg), len(jpeg)

class AdapterMethod(Method):
    """Encode with adapter parameters chosen per image and quality, decode from the file"""

    @abstractmethod
    def params_for(self, img: RawImage, quality: int) -> AdapterParams:
        pass

    def roundtrip(self, img: RawImage, quality: int) -> Tuple[RawImage, int]:
        encoded = encode_raw(img, self.params_for(img, quality), quality)
        return decode_raw(encoded.jpeg).image, len(encoded.jpeg)

class FixedGamma(AdapterMethod):
    def __init__(self, gamma: float = SRGB_GAMMA) -> None:
        self.kind = FixedGammaPreset(gamma)
        self.name = self.kind.name

    def params_for(self, img: RawImage, quality: int) -> AdapterParams:
        return preset(self.kind)

class Srgb(AdapterMethod):
    name = "srgb"

    def __init__(self, override: Callable[[ColorTransform], ColorTransform] = lambda color: color) -> None:
        self.override = override

    def params_for(self, img: RawImage, quality: int) -> AdapterParams:
        return preset(SrgbPreset(self.override(estimate_color_transform(img))))

class Fitted(AdapterMethod):
    fit_config: FitConfig

    def __init__(self, fit_config: FitConfig, use_dct: bool) -> None:
        self.fit_config = replace(fit_config, use_dct=use_dct)
        self.name = "fitted-dct" if use_dct else "fitted-nodct"

    def params_for(self, img: RawImage, quality: int) -> AdapterParams:
        return fit(img, replace(self.fit_config, quality=quality))

def default_methods(fit_config: FitConfig,
                    color_override: Callable[[ColorTransform], ColorTransform] = lambda color: color) -> List[Method]:
    return [PlainJpeg(), FixedGamma(), Srgb(color_override),
            Fitted(fit_config, use_dct=True), Fitted(fit_config, use_dct=False)]

@dataclass
class BenchResult:
    rows: List[ReportRow]
    """One per image, method and quality"""
    means: List[ReportRow]
    """One per method and quality, in method order"""

def _bench_image(entry: CorpusImage, methods: List[Method], qualities: List[int]) -> List[ReportRow]:
    reference_bytes = len(png16_bytes(entry.image))
    rows: List[ReportRow] = []
    for method in methods:
        for quality in qualities:
            reconstruction, file_bytes = method.roundtrip(entry.image, quality)
            report = evaluate(entry.image, reconstruction, file_bytes, reference_bytes)
            logger.debug(f"{entry.label} {method.name} Q={quality}: PSNR {report.psnr:.3f} dB, "
                         f"{report.bpp:.4f} bpp")
            rows.append(ReportRow(label=entry.label, method=method.name, quality=quality, report=report))
    return rows

def run_bench(corpus: List[CorpusImage], qualities: List[int], methods: List[Method],
              threads: int = 1) -> BenchResult:
    if not corpus:
        raise EmptyCorpusError("Cannot benchmark an empty corpus")
    per_image = map_in_threads(lambda entry: _bench_image(entry, methods, qualities), corpus, threads)
    rows = [row for image_rows in per_image for row in image_rows]
    grouped: Dict[Tuple[str, int], List[MetricsReport]] = {}
    for row in rows:
        assert row.quality is not None
        grouped.setdefault((row.method, row.quality), []).append(row.report)
    means = [ReportRow(label="mean", method=method.name, quality=quality,
                       report=mean_report(grouped[(method.name, quality)]))
             for method in methods for quality in qualities]
    return BenchResult(rows=rows, means=means)
