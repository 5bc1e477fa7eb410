# -*- coding: utf-8 -*-
"""GWarmer and Patching Network parameters, forward scores and gradients.

The warm branch combines the K+1 pooled layers of a node with one weight
vector per side and scores a pair by the inner product of the combined
vectors. The patching branch maps the (masked) warm representation
concatenated with the node content through a tanh MLP per side and scores
by the inner product of the mapped vectors. All gradients are analytic.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, NumericError
from ..io import write_header, read_header, read_struct, write_array, read_array
from .graph import USER, ITEM, SIDES, check_side

logger = logging.getLogger(__name__)

__all__ = [
    "LAYER_INITS",
    "PatchNetwork",
    "ModelParams",
    "FeatureTable",
    "draw_masks",
    "mask",
    "warm_repr",
    "warm_score",
    "patch_repr",
    "cold_score",
    "batch_loss",
    "backward",
    "write_checkpoint",
    "read_checkpoint",
]

CHECKPOINT_MAGIC = b"GPM1"
LAYER_INITS = ("root", "uniform")


def _init_layer_weights(K, layer_init):
    if layer_init == "root":
        w = np.zeros(K + 1)
        w[0] = 1.0
        return w
    elif layer_init == "uniform":
        return np.full(K + 1, 1.0 / (K + 1))
    raise ValueError(
        f"Unknown layer_init '{layer_init}', select from {', '.join(LAYER_INITS)}."
    )


class PatchNetwork:
    """Fully connected mapping network with tanh hidden layers and a linear
    output layer.

    Parameters
    ----------
    weights : list of numpy.ndarray
        Weight matrices of shape (fan_in, fan_out), input layer first.
    biases : list of numpy.ndarray
        Bias vectors of shape (fan_out,).
    """

    def __init__(self, weights, biases):
        if len(weights) == 0 or len(weights) != len(biases):
            raise ValueError("PatchNetwork needs one bias per weight matrix.")
        for W, W_next in zip(weights[:-1], weights[1:]):
            if W.shape[1] != W_next.shape[0]:
                raise ValueError(
                    f"Layer shapes do not chain: {W.shape} -> {W_next.shape}."
                )
        for W, b in zip(weights, biases):
            if b.shape != (W.shape[1],):
                raise ValueError(f"Bias shape {b.shape} does not match {W.shape}.")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, sizes, rng):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def depth(self):
        return len(self.weights)

    def forward(self, z):
        """Return the output and the list of layer inputs/activations."""
        acts = [z]
        h = z
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if layer < self.depth - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out):
        """Backpropagate ``d_out`` through the activations of :py:meth:`forward`.

        Returns
        -------
        grad_weights, grad_biases : list of numpy.ndarray
        d_in : numpy.ndarray
            Gradient with respect to the network input.
        """
        grad_weights = [None] * self.depth
        grad_biases = [None] * self.depth
        delta = d_out
        for layer in reversed(range(self.depth)):
            if layer < self.depth - 1:
                delta = delta * (1.0 - acts[layer + 1] ** 2)
            grad_weights[layer] = acts[layer].T @ delta
            grad_biases[layer] = delta.sum(axis=0)
            delta = delta @ self.weights[layer].T
        return grad_weights, grad_biases, delta

    def copy(self):
        return PatchNetwork(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases]
        )


class ModelParams:
    """Trainable parameters of GPatch.

    Attributes
    ----------
    w_user, w_item : numpy.ndarray
        Self-adaptive layer weights of shape (K+1,), one vector per side.
    patch_user, patch_item : PatchNetwork
        Mapping networks from [masked warm representation, content] to the
        patched representation.
    dim : int
        Warm representation dimension, the leading part of the network input.
    """

    def __init__(self, w_user, w_item, patch_user, patch_item, dim):
        self.w_user = np.asarray(w_user, dtype=np.float64)
        self.w_item = np.asarray(w_item, dtype=np.float64)
        self.patch_user = patch_user
        self.patch_item = patch_item
        self.dim = int(dim)
        if self.w_user.shape != self.w_item.shape:
            raise ValueError("User and item layer weights differ in length.")
        if patch_user.sizes[-1] != patch_item.sizes[-1]:
            raise ValueError("User and item patch networks differ in output size.")
        if min(patch_user.sizes[0], patch_item.sizes[0]) < self.dim:
            raise ValueError(f"Patch network inputs are smaller than dim={self.dim}.")

    @classmethod
    def init(
        cls,
        K,
        dim,
        user_content_dim,
        item_content_dim,
        hidden=(200,),
        out_dim=200,
        seed=0,
        layer_init="root",
    ):
        """Initialize the layer weights and draw the network weights at random.

        Parameters
        ----------
        K : int
            Number of walk layers besides the root.
        dim : int
            Embedding (warm representation) dimension.
        user_content_dim, item_content_dim : int
            Content feature dimensions.
        hidden : tuple of int
            Hidden layer sizes, by default a single layer of 200.
        out_dim : int
            Patched representation size.
        seed : int
        layer_init : {"root", "uniform"}
            "root" starts from the root embedding only, so the warm score
            initially equals the plain embedding inner product; "uniform"
            weighs all K+1 layers 1/(K+1).
        """
        rng = np.random.default_rng(seed)
        hidden = list(hidden)
        w = _init_layer_weights(K, layer_init)
        patch_user = PatchNetwork.init([dim + user_content_dim, *hidden, out_dim], rng)
        patch_item = PatchNetwork.init([dim + item_content_dim, *hidden, out_dim], rng)
        return cls(w.copy(), w.copy(), patch_user, patch_item, dim)

    def __repr__(self):
        return (
            f"ModelParams(K={self.K}, dim={self.dim}, "
            f"user_net={self.patch_user.sizes}, item_net={self.patch_item.sizes})"
        )

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return False
        a, b = self.tensors(), other.tensors()
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a
        )

    @property
    def K(self):
        return self.w_user.size - 1

    @property
    def user_content_dim(self):
        return self.patch_user.sizes[0] - self.dim

    @property
    def item_content_dim(self):
        return self.patch_item.sizes[0] - self.dim

    @property
    def out_dim(self):
        return self.patch_user.sizes[-1]

    def layer_weights(self, side):
        return self.w_user if check_side(side) == USER else self.w_item

    def network(self, side):
        return self.patch_user if check_side(side) == USER else self.patch_item

    def tensors(self):
        """Ordered mapping of parameter names to the live arrays."""
        out = OrderedDict(w_user=self.w_user, w_item=self.w_item)
        for side in SIDES:
            net = self.network(side)
            for layer, (W, b) in enumerate(zip(net.weights, net.biases)):
                out[f"patch_{side}.weight{layer}"] = W
                out[f"patch_{side}.bias{layer}"] = b
        return out

    def copy(self):
        return ModelParams(
            self.w_user.copy(),
            self.w_item.copy(),
            self.patch_user.copy(),
            self.patch_item.copy(),
            self.dim,
        )

    def is_finite(self):
        return all(np.isfinite(t).all() for t in self.tensors().values())


@dataclass
class FeatureTable:
    """Content vectors of users and items, warm and cold.

    Attributes
    ----------
    user, item : numpy.ndarray
        Arrays of shape (n_users, c_u) and (n_items, c_i); a dimension of 0
        means the side has no content.
    user_mask, item_mask : numpy.ndarray
        Boolean masks of the nodes with a content row.
    """

    user: np.ndarray
    item: np.ndarray
    user_mask: np.ndarray = None
    item_mask: np.ndarray = None

    def __post_init__(self):
        self.user = np.asarray(self.user, dtype=np.float64)
        self.item = np.asarray(self.item, dtype=np.float64)
        if self.user_mask is None:
            self.user_mask = np.ones(self.user.shape[0], dtype=bool)
        if self.item_mask is None:
            self.item_mask = np.ones(self.item.shape[0], dtype=bool)
        for side in SIDES:
            values = self.values(side)[self.mask(side)]
            if not np.isfinite(values).all():
                raise DataError(f"Non-finite {side} content features.")

    def values(self, side):
        return self.user if check_side(side) == USER else self.item

    def mask(self, side):
        return self.user_mask if check_side(side) == USER else self.item_mask

    def dim(self, side):
        return self.values(side).shape[1]

    def rows(self, side, indices):
        """Content rows of ``indices``; nodes without content raise KeyError."""
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        present = self.mask(side)[indices]
        if not present.all():
            missing = indices[~present][:10].tolist()
            raise KeyError(f"No content features for {side}s {missing}.")
        return self.values(side)[indices]


def draw_masks(rng, n, tau):
    """Draw ``n`` Bernoulli(tau) mask variables; 1 masks the representation."""
    return (rng.random(n) < tau).astype(np.int8)


def mask(x, p):
    """Replace representation(s) ``x`` by zeros where ``p`` is 1.

    Whole vectors are masked, never single coordinates. ``x`` is a vector
    with a scalar ``p`` or a (B, d) array with a (B,) array ``p``.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p)
    if x.ndim == 1:
        return np.zeros_like(x) if p else x.copy()
    return np.where(p.astype(bool)[:, None], 0.0, x)


def warm_repr(side, indices, reps, params):
    """Weighted sum of the pooled layers of warm nodes.

    Returns an array of shape (d,) for a scalar index, else (B, d).
    """
    blocks = reps.rows(side, indices)
    out = np.einsum("bkd,k->bd", blocks, params.layer_weights(side))
    return out[0] if np.ndim(indices) == 0 else out


def warm_score(users, items, reps, params):
    """GWarmer score: inner product of the warm representations."""
    scalar = np.ndim(users) == 0 and np.ndim(items) == 0
    users, items = np.atleast_1d(users), np.atleast_1d(items)
    for side, idx in [(USER, users), (ITEM, items)]:
        cold = [i for i in idx.tolist() if not reps.has(side, i)]
        if cold:
            raise ValueError(f"{side}s {cold[:10]} are cold: route to patching branch.")
    x_u = warm_repr(USER, users, reps, params)
    x_i = warm_repr(ITEM, items, reps, params)
    scores = np.einsum("bd,bd->b", x_u, x_i)
    return float(scores[0]) if scalar else scores


def patch_repr(side, masked_warm, content, params):
    """Patched representation ``f_side([masked_warm, content])``.

    Parameters
    ----------
    side : {"user", "item"}
    masked_warm : numpy.ndarray
        Masked warm representation(s), (d,) or (B, d).
    content : numpy.ndarray
        Content vector(s), (c,) or (B, c).
    params : ModelParams
    """
    if content is None:
        raise DataError(f"Missing {side} content row.")
    z = np.concatenate([masked_warm, content], axis=-1)
    out, _ = params.network(side).forward(z)
    return out


def _side_input(side, indices, p, reps, features, params):
    """Masked warm representations (zeros where p=1) and content rows."""
    warm = np.zeros((indices.size, reps.dim))
    keep = p == 0
    if keep.any():
        warm[keep] = warm_repr(side, indices[keep], reps, params)
    return warm, features.rows(side, indices)


def _infer_draws(side, indices, reps):
    """p=1 for cold nodes and p=0 for warm nodes."""
    return (~reps.warm_mask(side)[indices]).astype(np.int8)


def cold_score(users, items, reps, features, params, mode="infer", draws=None):
    """Patching Network score: inner product of the patched representations.

    Parameters
    ----------
    users, items : int or numpy.ndarray
        Dense indices of the pairs.
    reps : LayerReps
    features : FeatureTable
    params : ModelParams
    mode : {"infer", "train"}
        In "infer" mode cold sides are masked (p=1) and warm sides kept
        (p=0); at least one side of each pair must be cold. In "train" mode
        ``draws`` gives the mask variables (all zeros by default).
    draws : tuple of numpy.ndarray, optional
        (p_user, p_item) for "train" mode.
    """
    scalar = np.ndim(users) == 0 and np.ndim(items) == 0
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    items = np.atleast_1d(np.asarray(items, dtype=np.int64))
    if mode == "infer":
        p_u, p_i = _infer_draws(USER, users, reps), _infer_draws(ITEM, items, reps)
        both_warm = (p_u == 0) & (p_i == 0)
        if both_warm.any():
            raise ValueError(
                f"{int(both_warm.sum())} pairs are warm: route to GWarmer branch."
            )
    elif mode == "train":
        if draws is None:
            p_u = np.zeros(users.size, dtype=np.int8)
            p_i = np.zeros(items.size, dtype=np.int8)
        else:
            p_u, p_i = (np.broadcast_to(np.asarray(p), users.shape) for p in draws)
    else:
        raise ValueError(f"Unknown mode '{mode}', select from 'infer', 'train'.")
    z_u = _side_input(USER, users, p_u, reps, features, params)
    z_i = _side_input(ITEM, items, p_i, reps, features, params)
    x_uc = patch_repr(USER, *z_u, params)
    x_ic = patch_repr(ITEM, *z_i, params)
    scores = np.einsum("bd,bd->b", x_uc, x_ic)
    return float(scores[0]) if scalar else scores


def _forward_backward(
    users, items, y, draws, reps, features, params, l2, detach_patch_input, reduction
):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    p_u, p_i = (np.asarray(p).astype(bool) for p in draws)
    n = users.size
    scale = 1.0 / n if reduction == "mean" else 1.0

    # warm branch
    blocks_u = reps.rows(USER, users)
    blocks_i = reps.rows(ITEM, items)
    x_u = np.einsum("bkd,k->bd", blocks_u, params.w_user)
    x_i = np.einsum("bkd,k->bd", blocks_i, params.w_item)
    s_w = np.einsum("bd,bd->b", x_u, x_i)

    # patching branch
    z_u = np.concatenate(
        [np.where(p_u[:, None], 0.0, x_u), features.rows(USER, users)], axis=1
    )
    z_i = np.concatenate(
        [np.where(p_i[:, None], 0.0, x_i), features.rows(ITEM, items)], axis=1
    )
    x_uc, acts_u = params.patch_user.forward(z_u)
    x_ic, acts_i = params.patch_item.forward(z_i)
    s_c = np.einsum("bd,bd->b", x_uc, x_ic)

    r_w, r_c = y - s_w, y - s_c
    loss = scale * float(np.sum(r_w**2) + np.sum(r_c**2))
    if l2:
        loss += l2 * sum(
            float(np.sum(t**2))
            for k, t in params.tensors().items()
            if ".bias" not in k
        )
    if not np.isfinite(loss):
        raise NumericError(
            f"Non-finite loss in batch of {n} examples "
            f"(users {users[:5].tolist()}, items {items[:5].tolist()}, "
            f"max |warm score| {np.nanmax(np.abs(s_w)):.3g}, "
            f"max |patch score| {np.nanmax(np.abs(s_c)):.3g})."
        )

    g_w = -2.0 * scale * r_w
    g_c = -2.0 * scale * r_c

    dx_u = g_w[:, None] * x_i
    dx_i = g_w[:, None] * x_u
    gW_u, gb_u, dz_u = params.patch_user.backward(acts_u, g_c[:, None] * x_ic)
    gW_i, gb_i, dz_i = params.patch_item.backward(acts_i, g_c[:, None] * x_uc)
    if not detach_patch_input:
        d = x_u.shape[1]
        dx_u += np.where(p_u[:, None], 0.0, dz_u[:, :d])
        dx_i += np.where(p_i[:, None], 0.0, dz_i[:, :d])

    grads = OrderedDict(
        w_user=np.einsum("bkd,bd->k", blocks_u, dx_u),
        w_item=np.einsum("bkd,bd->k", blocks_i, dx_i),
    )
    for side, gW, gb in [(USER, gW_u, gb_u), (ITEM, gW_i, gb_i)]:
        for layer, (gw_l, gb_l) in enumerate(zip(gW, gb)):
            grads[f"patch_{side}.weight{layer}"] = gw_l
            grads[f"patch_{side}.bias{layer}"] = gb_l
    if l2:
        for key, value in params.tensors().items():
            if ".bias" not in key:
                grads[key] = grads[key] + 2.0 * l2 * value
    for key, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NumericError(
                f"Non-finite gradient of {key} in batch of {n} examples "
                f"(users {users[:5].tolist()}, items {items[:5].tolist()})."
            )
    return loss, grads


def batch_loss(users, items, y, draws, reps, features, params, l2=0.0, reduction="sum"):
    """Joint squared-error loss of both branches on a batch.

    The loss is ``sum (y - warm)^2 + (y - patch)^2`` (or its mean over the
    batch with ``reduction="mean"``) plus ``l2`` times the squared norm of
    the layer weights and network weights.
    """
    loss, _ = _forward_backward(
        users, items, y, draws, reps, features, params, l2, True, reduction
    )
    return loss


def backward(
    users,
    items,
    y,
    draws,
    reps,
    features,
    params,
    l2=0.0,
    detach_patch_input=False,
    reduction="sum",
):
    """Analytic gradients of :py:func:`batch_loss` for every parameter tensor.

    The warm term never masks. The patching term uses the masked warm
    representation, and its gradient flows into the layer weights through
    the unmasked inputs unless ``detach_patch_input`` is set. Layer
    representations and content are constants.

    Parameters
    ----------
    users, items : numpy.ndarray
        Dense indices of the warm training pairs.
    y : numpy.ndarray
        Labels in {0, 1}.
    draws : tuple of numpy.ndarray
        (p_user, p_item) mask variables of the patching term.
    reps : LayerReps
    features : FeatureTable
    params : ModelParams
    l2 : float, optional
        Coefficient of the L2 penalty on non-bias parameters.
    detach_patch_input : bool, optional
        Stop the patching gradient at the warm representation input.
    reduction : {"sum", "mean"}
        Sum or average the per-example losses.

    Returns
    -------
    loss : float
    grads : OrderedDict
        Gradients keyed like :py:meth:`ModelParams.tensors`.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"Unknown reduction '{reduction}', select 'sum' or 'mean'.")
    return _forward_backward(
        users,
        items,
        y,
        draws,
        reps,
        features,
        params,
        l2,
        detach_patch_input,
        reduction,
    )


def write_checkpoint(fn, params):
    """Write a parameter checkpoint.

    Layout: ``GPM1``; K, d, user content dim, item content dim (uint32);
    per side the number of layers followed by the layer sizes (uint32);
    then all tensors of :py:meth:`ModelParams.tensors` in order, row-major
    little-endian float64.
    """
    with open(fn, "wb") as fp:
        write_header(
            fp,
            CHECKPOINT_MAGIC,
            "IIII",
            params.K,
            params.dim,
            params.user_content_dim,
            params.item_content_dim,
        )
        for side in SIDES:
            sizes = params.network(side).sizes
            fp.write(np.array([len(sizes) - 1] + sizes, dtype="<u4").tobytes())
        for tensor in params.tensors().values():
            write_array(fp, tensor, np.float64)


def read_checkpoint(fn):
    """Read a checkpoint written by :py:func:`write_checkpoint`."""
    with open(fn, "rb") as fp:
        K, dim, c_u, c_i = read_header(fp, CHECKPOINT_MAGIC, "IIII", fn=fn)
        sizes = {}
        for side in SIDES:
            (depth,) = read_struct(fp, "I", fn=fn)
            sizes[side] = list(read_struct(fp, "I" * (depth + 1), fn=fn))
        w_user = read_array(fp, np.float64, (K + 1,), fn=fn)
        w_item = read_array(fp, np.float64, (K + 1,), fn=fn)
        nets = {}
        for side in SIDES:
            weights, biases = [], []
            for fan_in, fan_out in zip(sizes[side][:-1], sizes[side][1:]):
                weights.append(read_array(fp, np.float64, (fan_in, fan_out), fn=fn))
                biases.append(read_array(fp, np.float64, (fan_out,), fn=fn))
            nets[side] = PatchNetwork(weights, biases)
    if sizes[USER][0] != dim + c_u or sizes[ITEM][0] != dim + c_i:
        raise DataError(f"{fn}: network input sizes do not match d and content dims.")
    return ModelParams(w_user, w_item, nets[USER], nets[ITEM], dim)
