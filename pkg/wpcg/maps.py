#  Copyright (c) 2021 KTH Royal Institute of Technology
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.
"""
Residual transport maps T(x) = x + g(x) used by the function-approximation
subproblem solver. g is a fully connected tanh network; its Jacobian is
computed exactly by the layer-wise chain rule.
"""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .model import WPCGError

__all__ = ['MapShapeError', 'SingularJacobianError', 'MAX_DENSE_DIM',
           'TransportMapModel', 'map_forward', 'map_jacobian',
           'map_jacobian_logdet']

#: largest block dimension for dense determinants
MAX_DENSE_DIM = 16

_SINGULAR_LOGDET = np.log(1e-300)


class MapShapeError(WPCGError):
    pass


class SingularJacobianError(WPCGError):
    pass


class TransportMapModel(torch.nn.Module):
    """
    Parameters of a residual map on R^d.

    The output layer starts at zero, so a fresh model is exactly the
    identity. With no hidden widths g is a single affine layer.

    Parameters
    ----------
    dim
        Block dimension d (first and last layer size).
    hidden_widths
        Sizes of the tanh hidden layers.
    rng
        Generator for the Glorot-uniform hidden-layer initialization.
    """

    def __init__(self,
                 dim: int,
                 hidden_widths: Sequence[int] = (64, 64),
                 rng: Optional[np.random.Generator] = None):
        super(TransportMapModel, self).__init__()
        if dim < 1 or any(w < 1 for w in hidden_widths):
            raise MapShapeError(f'Invalid layer sizes: d={dim}, '
                                f'hidden={list(hidden_widths)}.')
        sizes = [int(dim), *(int(w) for w in hidden_widths), int(dim)]
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(n_in, n_out, dtype=torch.float64)
            for n_in, n_out in zip(sizes[:-1], sizes[1:])
        )
        self.reset_parameters(rng if rng is not None
                              else np.random.default_rng(0))

    @classmethod
    def from_arrays(cls,
                    weights: Sequence[np.ndarray],
                    biases: Sequence[np.ndarray]) -> TransportMapModel:
        """Builds a model from explicit (out x in) weights and biases."""
        if len(weights) != len(biases) or not weights:
            raise MapShapeError('Need one bias per weight matrix.')
        dim = np.shape(weights[0])[1]
        hidden = [np.shape(w)[0] for w in weights[:-1]]
        model = cls(dim, hidden)
        with torch.no_grad():
            for layer, w, b in zip(model.layers, weights, biases):
                w = torch.as_tensor(np.asarray(w, dtype=np.float64))
                b = torch.as_tensor(np.asarray(b, dtype=np.float64))
                if w.shape != layer.weight.shape or \
                        b.shape != layer.bias.shape:
                    raise MapShapeError(f'Parameter shapes {tuple(w.shape)}, '
                                        f'{tuple(b.shape)} do not match layer '
                                        f'{tuple(layer.weight.shape)}.')
                layer.weight.copy_(w)
                layer.bias.copy_(b)
        return model

    @property
    def dim(self) -> int:
        return self.layers[0].in_features

    @property
    def layer_sizes(self) -> List[int]:
        return [self.layers[0].in_features] + \
               [layer.out_features for layer in self.layers]

    def reset_parameters(self, rng: np.random.Generator) -> None:
        with torch.no_grad():
            for layer in self.layers[:-1]:
                n_out, n_in = layer.weight.shape
                bound = np.sqrt(6.0 / (n_in + n_out))
                layer.weight.copy_(torch.from_numpy(
                    rng.uniform(-bound, bound, size=(n_out, n_in))))
                layer.bias.zero_()
        self.reset_output_layer()

    def reset_output_layer(self) -> None:
        """Zeroes the output layer, turning the model into the identity."""
        with torch.no_grad():
            self.layers[-1].weight.zero_()
            self.layers[-1].bias.zero_()

    def arrays(self) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        return ([layer.weight.detach().numpy().copy()
                 for layer in self.layers],
                [layer.bias.detach().numpy().copy()
                 for layer in self.layers])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = torch.tanh(layer(h))
        return x + self.layers[-1](h)

    def jacobian(self, x: torch.Tensor) -> torch.Tensor:
        """Batched Jacobians I + dg/dx, shape N x d x d."""
        n, d = x.shape
        eye = torch.eye(d, dtype=x.dtype)
        h = x
        dh = eye.expand(n, d, d)
        for layer in self.layers[:-1]:
            h = torch.tanh(layer(h))
            dh = (1.0 - h * h).unsqueeze(-1) * \
                torch.matmul(layer.weight, dh)
        return eye + torch.matmul(self.layers[-1].weight, dh)


def _as_rows(model: TransportMapModel,
             x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = x.reshape(1, -1) if single else x
    if rows.ndim != 2 or rows.shape[1] != model.dim:
        raise MapShapeError(f'Map on R^{model.dim} got input of shape '
                            f'{x.shape}.')
    return rows, single


def map_forward(model: TransportMapModel, x: np.ndarray) -> np.ndarray:
    """Evaluates T(x) = x + g(x) for a point or for rows of points."""
    rows, single = _as_rows(model, x)
    with torch.no_grad():
        y = model(torch.from_numpy(rows)).numpy()
    return y[0] if single else y


def map_jacobian(model: TransportMapModel, x: np.ndarray) -> np.ndarray:
    rows, single = _as_rows(model, x)
    with torch.no_grad():
        jac = model.jacobian(torch.from_numpy(rows)).numpy()
    return jac[0] if single else jac


def map_jacobian_logdet(model: TransportMapModel,
                        x: np.ndarray) -> Tuple[float, float]:
    """
    log|det grad T(x)| and the sign of the determinant, from an LU
    factorization of the exact Jacobian.

    Raises
    ------
    MapShapeError
        If x has the wrong length or d exceeds MAX_DENSE_DIM.
    SingularJacobianError
        If |det| < 1e-300.
    """
    if model.dim > MAX_DENSE_DIM:
        raise MapShapeError(f'Dense determinants are limited to d <= '
                            f'{MAX_DENSE_DIM}, got {model.dim}.')
    jac = map_jacobian(model, np.asarray(x, dtype=np.float64).reshape(-1))
    sign, logabsdet = np.linalg.slogdet(jac)
    if sign == 0 or logabsdet < _SINGULAR_LOGDET:
        raise SingularJacobianError(f'Singular map Jacobian at {x}.')
    return float(logabsdet), float(sign)
