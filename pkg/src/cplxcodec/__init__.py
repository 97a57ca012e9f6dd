"""Complex-valued neural speech codec working directly on STFT coefficients."""

from .dsp import AudioBuffer, StftConfig, istft, read_wav, stft, write_wav
from .model import Codec, ModelConfig, build_model, load_checkpoint, make_config, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "StftConfig", "stft", "istft", "read_wav", "write_wav",
    "Codec", "ModelConfig", "make_config", "build_model", "save_checkpoint", "load_checkpoint",
]
