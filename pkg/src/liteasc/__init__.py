"""Low-complexity acoustic scene classification with a two-pathway lightweight ResNet."""

from .corpus import SCENES, AudioClip, CorpusManifest, Record, load_manifest, read_wav, write_wav
from .features import extract_feature, read_feature, write_feature
from .params import ModelParams, count_parameters, load_model, save_model
from .quantize import audit_budget, quantize_model

__version__ = "0.1.0"
