"""Image obfuscation operators, attacks against them, and privacy audits."""

from .tensorio import (
    ImageTensor,
    LabeledDataset,
    Mask,
    SeededRng,
    dequantize,
    load_idx,
    load_pnm,
    quantize,
    save_pnm,
    synth_glyphs,
)
from .obfuscation import (
    BlurProfile,
    ObfuscationSpec,
    box_blur,
    crop_obfuscate,
    derive_pil_profile,
    dp_pix,
    masked_apply,
    pil_blur,
    pixelize,
)

__version__ = "0.1.0"
