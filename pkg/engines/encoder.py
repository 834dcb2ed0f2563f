"""
Neural 3D mapper f: a 3D conv encoder-decoder with skip connections whose
L2-normalized output is the feature map M. Also holds the reverse-mode
gradient entry point, the Adam step, the momentum ("slow") copy, and the
.ckpt checkpoint format.
"""

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from models.data_models import VoxelGrid
from models.errors import CorruptCheckpoint, IoError, ShapeMismatch, SpecMismatch
from models.schemas import EncoderSpec
from utils.logger import get_logger

logger = get_logger(__name__)

NORM_EPS = 1e-6
CKPT_FORMAT = "ckpt/1"


def configure_torch(seed: int, threads: int = 1) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def same_padding(kernel: int, stride: int) -> Tuple[int, int]:
    """(low, high) zero padding so a strided conv maps n voxels to n / stride"""
    total = max(kernel - stride, 0)
    return total // 2, total - total // 2


def pad3d(x: torch.Tensor, kernel: int, stride: int) -> torch.Tensor:
    lo, hi = same_padding(kernel, stride)
    if lo == hi == 0:
        return x
    return F.pad(x, (lo, hi) * 3)


def l2_normalize(x: torch.Tensor) -> torch.Tensor:
    """Channel-wise v / max(||v||, 1e-6); zero features stay zero"""
    return F.normalize(x, p=2.0, dim=1, eps=NORM_EPS)


class NeuralMapper(nn.Module):
    """Encoder-decoder over (N, C, W, H, D) voxel tensors"""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        self.down = nn.ModuleList()
        self.up = nn.ModuleList()

        channels = spec.input_channels
        enc_channels: List[int] = []
        for stage in spec.encoder_stages:
            self.down.append(nn.Conv3d(channels, stage.out_channels, stage.kernel, stride=stage.stride))
            channels = stage.out_channels
            enc_channels.append(channels)

        for stage in spec.decoder_stages:
            if stage.stride > 1:
                pad = math.ceil((stage.kernel - stage.stride) / 2)
                out_pad = 2 * pad - (stage.kernel - stage.stride)
                layer = nn.ConvTranspose3d(
                    channels, stage.out_channels, stage.kernel,
                    stride=stage.stride, padding=pad, output_padding=out_pad,
                )
            else:
                layer = nn.Conv3d(channels, stage.out_channels, stage.kernel)
            self.up.append(layer)
            channels = stage.out_channels
            if stage.skip_source is not None:
                channels += enc_channels[stage.skip_source]

        self.final = nn.Conv3d(channels, spec.final_channels, spec.final_kernel)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        spec = self.spec
        if x.dim() != 5 or x.shape[1] != spec.input_channels:
            raise ShapeMismatch(f"expected (N, {spec.input_channels}, W, H, D) input, got {tuple(x.shape)}")
        if any(n % spec.stride_product for n in x.shape[2:]):
            raise ShapeMismatch(f"spatial dims {tuple(x.shape[2:])} not divisible by {spec.stride_product}")

        skips = []
        for stage, conv in zip(spec.encoder_stages, self.down):
            x = F.leaky_relu(conv(pad3d(x, stage.kernel, stage.stride)), spec.leaky_slope)
            skips.append(x)
        for stage, layer in zip(spec.decoder_stages, self.up):
            x = layer(x) if stage.stride > 1 else layer(pad3d(x, stage.kernel, 1))
            x = F.leaky_relu(x, spec.leaky_slope)
            if stage.skip_source is not None:
                x = torch.cat([x, skips[stage.skip_source]], dim=1)
        x = self.final(pad3d(x, spec.final_kernel, 1))
        if spec.l2_normalize_output:
            x = l2_normalize(x)
        return x


def init_encoder(spec: EncoderSpec, seed: int, dtype: torch.dtype = torch.float32) -> NeuralMapper:
    """Weights and biases uniform in ±sqrt(1/fan_in) from a seeded generator.

    float64 runs every convolution with 64-bit accumulation; forward_encoder
    still stores float32 feature maps. Draws happen in float32 so both dtypes
    start from the same values.
    """
    encoder = NeuralMapper(spec)
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in encoder.modules():
            if isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
                fan_in = module.in_channels * math.prod(module.kernel_size)
                bound = math.sqrt(1.0 / fan_in)
                module.weight.uniform_(-bound, bound, generator=g)
                module.bias.uniform_(-bound, bound, generator=g)
    return encoder.to(dtype)


def slow_copy(encoder: nn.Module) -> nn.Module:
    slow = copy.deepcopy(encoder)
    for p in slow.parameters():
        p.requires_grad_(False)
    return slow


def grid_to_tensor(grid: VoxelGrid, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(W, H, D, C) grid -> (1, C, W, H, D) tensor"""
    return torch.from_numpy(np.ascontiguousarray(grid.data)).to(dtype).permute(3, 0, 1, 2).unsqueeze(0).contiguous()


def tensor_to_grid(t: torch.Tensor, spec) -> VoxelGrid:
    return VoxelGrid(spec, t.detach().squeeze(0).permute(1, 2, 3, 0).to(torch.float32).cpu().numpy())


def _module_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def forward_encoder(params: NeuralMapper, grid: VoxelGrid) -> VoxelGrid:
    """Encode a 4-channel input grid into a feature map on the same spec"""
    if grid.channels != params.spec.input_channels:
        raise ShapeMismatch(f"encoder expects {params.spec.input_channels} channels, grid has {grid.channels}")
    with torch.no_grad():
        out = params(grid_to_tensor(grid, _module_dtype(params)))
    return tensor_to_grid(out, grid.spec)


def backward(
    params: NeuralMapper,
    input: Union[VoxelGrid, torch.Tensor],
    output_grad: torch.Tensor,
) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """Exact reverse-mode gradients of <forward(input), output_grad>"""
    x = grid_to_tensor(input, _module_dtype(params)) if isinstance(input, VoxelGrid) else input
    x = x.detach().clone().requires_grad_(True)
    out = params(x)
    if tuple(out.shape) != tuple(output_grad.shape):
        raise ShapeMismatch(f"output grad {tuple(output_grad.shape)} does not match output {tuple(out.shape)}")
    weights = list(params.parameters())
    grads = torch.autograd.grad(out, weights + [x], grad_outputs=output_grad.to(out.dtype), allow_unused=True)
    param_grads = [torch.zeros_like(w) if g is None else g for w, g in zip(weights, grads[:-1])]
    return param_grads, grads[-1]


@dataclass
class OptimState:
    """Adam moments live inside the torch optimizer; step counts our updates"""
    optimizer: torch.optim.Adam
    step: int = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    @property
    def betas(self) -> Tuple[float, float]:
        return self.optimizer.param_groups[0]["betas"]

    @property
    def eps(self) -> float:
        return self.optimizer.param_groups[0]["eps"]


def make_optim_state(parameters, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> OptimState:
    return OptimState(torch.optim.Adam(list(parameters), lr=lr, betas=tuple(betas), eps=eps))


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: OptimState) -> OptimState:
    """One bias-corrected Adam update of `params` (the optimizer's own parameters)"""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        p.grad = g.detach().to(p.dtype).clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step += 1
    return state


def momentum_update(slow: NeuralMapper, fast: NeuralMapper, mu: float) -> NeuralMapper:
    """slow <- mu * slow + (1 - mu) * fast, parameter by parameter"""
    if slow.spec != fast.spec:
        raise SpecMismatch("slow and fast encoders have different specs")
    with torch.no_grad():
        for ps, pf in zip(slow.parameters(), fast.parameters()):
            ps.mul_(mu).add_(pf, alpha=1.0 - mu)
    return slow


def save_checkpoint(path: Path, module: nn.Module, kind: str, spec: dict, step: int = 0, extra: Optional[dict] = None) -> None:
    """JSON header line, then every parameter as little-endian float32 in declaration order"""
    state = module.state_dict()
    header = {
        "format": CKPT_FORMAT,
        "kind": kind,
        "spec": spec,
        "step": int(step),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    if extra:
        header.update(extra)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
            for v in state.values():
                f.write(v.detach().cpu().numpy().astype("<f4").tobytes(order="C"))
    except OSError as e:
        raise IoError(f"cannot write checkpoint: {e}", str(path))


def read_checkpoint(path: Path, kind: Optional[str] = None) -> Tuple[dict, Dict[str, torch.Tensor]]:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            payload = f.read()
        entries = header["params"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CorruptCheckpoint(f"unreadable checkpoint header: {e}", str(path))
    if header.get("format") != CKPT_FORMAT:
        raise CorruptCheckpoint(f"unknown checkpoint format {header.get('format')!r}", str(path))
    if kind is not None and header.get("kind") != kind:
        raise CorruptCheckpoint(f"expected a {kind} checkpoint, found {header.get('kind')!r}", str(path))
    sizes = [math.prod(e["shape"]) for e in entries]
    if len(payload) != 4 * sum(sizes):
        raise CorruptCheckpoint(f"payload has {len(payload)} bytes, header implies {4 * sum(sizes)}", str(path))
    flat = np.frombuffer(payload, dtype="<f4")
    state, offset = {}, 0
    for e, n in zip(entries, sizes):
        state[e["name"]] = torch.from_numpy(flat[offset:offset + n].reshape(e["shape"]).astype(np.float32))
        offset += n
    return header, state


def save_encoder(path: Path, encoder: NeuralMapper, step: int = 0, extra: Optional[dict] = None) -> None:
    save_checkpoint(path, encoder, "encoder", encoder.spec.model_dump(), step, extra)


def load_encoder(path: Path) -> Tuple[NeuralMapper, dict]:
    header, state = read_checkpoint(path, kind="encoder")
    try:
        encoder = NeuralMapper(EncoderSpec.model_validate(header["spec"]))
        encoder.load_state_dict(state)
    except (ValueError, RuntimeError, KeyError) as e:
        raise CorruptCheckpoint(f"checkpoint does not match its spec: {e}", str(path))
    return encoder, header
