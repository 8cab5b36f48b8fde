from .autograd import Tensor, backward, no_grad
from .models import UNetConfig, init_mlp, init_unet, mlp_forward, unet_forward
from .params import AdamConfig, ParamStore, adam_step, load_checkpoint, polyak_update, save_checkpoint

__all__ = [
    "AdamConfig",
    "ParamStore",
    "Tensor",
    "UNetConfig",
    "adam_step",
    "backward",
    "init_mlp",
    "init_unet",
    "load_checkpoint",
    "mlp_forward",
    "no_grad",
    "polyak_update",
    "save_checkpoint",
    "unet_forward",
]
