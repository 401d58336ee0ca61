"""Model hyperparameters and the encoder/decoder frequency-stage plan."""

from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions shared by every forward operation.

    d: feature channels; f_prime: reduced frequency bins after the encoder;
    past/future: attention window [k-past, k+future] (future=0 keeps the
    pipeline causal); pad_mode controls what fills missing key frames
    ("learned", "zero", or "none" to drop them from the key set).
    """

    d: int = 16
    f_prime: int = 32
    heads: int = 4
    past: int = 2
    future: int = 0
    dpr_hidden: int = 32
    n_bins: int = 257
    alpha: float = 0.5
    pad_mode: str = "learned"

    def __post_init__(self):
        if min(self.d, self.f_prime, self.heads, self.dpr_hidden) <= 0:
            raise ValueError("dimensions must be positive")
        if self.past < 0 or self.future < 0:
            raise ValueError("window extents must be >= 0")
        if (self.d * self.f_prime) % self.heads != 0:
            raise ValueError("heads must divide the flattened frame dimension")
        if self.pad_mode not in ("learned", "zero", "none"):
            raise ValueError(f"unknown pad_mode {self.pad_mode!r}")
        if self.frequency_stages()[-1] != self.f_prime:
            raise ValueError(
                f"encoder stages end at {self.frequency_stages()[-1]} bins, "
                f"expected f_prime={self.f_prime}"
            )

    @property
    def embed_dim(self) -> int:
        return self.d * self.f_prime

    @property
    def window_len(self) -> int:
        return self.past + self.future + 1

    def frequency_stages(self) -> list[int]:
        """Frequency sizes after each stride-2 encoder stage (3 stages)."""
        sizes = []
        f = self.n_bins
        for _ in range(3):
            pad = (f - 3) % 2
            f = (f + pad - 3) // 2 + 1
            sizes.append(f)
        return sizes

    def stage_pads(self) -> list[int]:
        """Left padding used by each encoder stage (mirrored as decoder crops)."""
        pads = []
        f = self.n_bins
        for _ in range(3):
            pad = (f - 3) % 2
            pads.append(pad)
            f = (f + pad - 3) // 2 + 1
        return pads
