"""Small BN-heavy CNN with an amplification-aware forward pass."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

# (in_channels, out_channels, pool_after) per conv/BN/ReLU block; eight BN
# layers so the defender's layer scan has room. Downsampling is 2x2 max
# pooling (whose extents divide exactly), taking 16x16 down to 2x2.
BLOCKS = [
    (3, 16, False),
    (16, 16, True),
    (16, 32, False),
    (32, 32, True),
    (32, 64, False),
    (64, 64, True),
    (64, 64, False),
    (64, 64, False),
]

# Scale-only standardization: a zero mean keeps zero-padding consistent
# between the training-time input pipeline and the exported first conv
# (pad pixels map to 0 either way), so the fold is exact.
INPUT_MEAN = 0.0
INPUT_STD = 0.25


class ToyCnn(nn.Module):
    """Conv-BN-ReLU stack, global average pool, linear head.

    ``forward`` can evaluate the amplified variant of the network: the last
    ``amplify_last`` batch-norm layers run with (omega * gamma, omega * beta)
    without mutating the module. Amplified passes never update running
    statistics (momentum is forced to zero for them).
    """

    def __init__(self, classes: int = 10):
        super().__init__()
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        self.pools = []
        for cin, cout, pool in BLOCKS:
            self.convs.append(nn.Conv2d(cin, cout, 3, stride=1, padding=1, bias=False))
            self.bns.append(nn.BatchNorm2d(cout))
            self.pools.append(pool)
        self.head = nn.Linear(BLOCKS[-1][1], classes)

    @property
    def bn_count(self) -> int:
        return len(self.bns)

    def forward(self, x, amplify_last: int = 0, omega: float = 1.0):
        first_amplified = len(self.bns) - amplify_last
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            x = conv(x)
            if i >= first_amplified and omega != 1.0:
                x = F.batch_norm(
                    x,
                    bn.running_mean,
                    bn.running_var,
                    bn.weight * omega,
                    bn.bias * omega,
                    training=self.training,
                    momentum=0.0,  # keep the vanilla pass the only stats writer
                    eps=bn.eps,
                )
            else:
                x = bn(x)
            x = torch.relu(x)
            if self.pools[i]:
                x = F.max_pool2d(x, 2, 2)
        x = x.mean(dim=(2, 3))
        return self.head(x)


def standardize(images: torch.Tensor) -> torch.Tensor:
    """Training-time input normalization; folded into conv1 at export."""
    return (images - INPUT_MEAN) / INPUT_STD
