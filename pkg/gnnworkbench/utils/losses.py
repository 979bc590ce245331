#!/usr/bin/python

import logging
import numpy as np

from gnnworkbench.utils.autodiff import ValueGraph, Var
import gnnworkbench.utils.autodiff as ad

logger = logging.getLogger("gnnworkbench")

LOSS_KINDS = ("CE", "MCE", "LM", "TLM", "PM")


def margins(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-node z_y - max_{c != y} z_c"""
    logits = np.asarray(logits, dtype=np.float64)
    idx = np.arange(len(labels))
    true = logits[idx, labels]
    other = logits.copy()
    other[idx, labels] = -np.inf
    return true - other.max(axis=1)


def _best_other(z: Var, onehot: np.ndarray) -> Var:
    # push the true class below every other class, then take the row max
    spread = float(np.ptp(z.value)) + 1.0
    return ad.row_max(z - onehot * spread)


def _mean(per_node: Var) -> Var:
    return ad.vsum(per_node) / float(per_node.shape[0])


def attack_loss(kind: str, logits, labels: np.ndarray, mask):
    """Attack objective over the masked nodes, to be maximized.

    Args:
        kind (str): CE, MCE (CE over currently correct nodes), LM, TLM or PM
        logits: Var, or an n x C array
        labels (np.ndarray): ground-truth (or self-training) labels
        mask: node indices the loss is averaged over

    Returns:
        a scalar Var, or a float when `logits` is an array
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"Unknown attack loss '{kind}'")
    mask = np.atleast_1d(np.asarray(mask, dtype=np.int64))
    if not len(mask):
        raise ValueError("Attack loss mask is empty")

    if not isinstance(logits, Var):
        vg = ValueGraph()
        return float(attack_loss(kind, vg.constant(logits), labels, mask).value)

    z = ad.gather(logits, mask)
    y = np.asarray(labels)[mask]
    onehot = np.eye(z.shape[1])[y]

    if kind in ("CE", "MCE"):
        nll = -ad.vsum(ad.log_softmax(z) * onehot, axis=1)
        if kind == "CE":
            return _mean(nll)
        correct = (np.argmax(z.value, axis=1) == y).astype(np.float64)
        if not correct.any():
            return ad.vsum(nll) * 0.0
        return ad.vsum(nll * correct) / float(correct.sum())

    if kind == "PM":
        z = ad.row_softmax(z)
    margin = _best_other(z, onehot) - ad.vsum(z * onehot, axis=1)
    if kind == "TLM":
        margin = ad.tanh(margin)
    return _mean(margin)


def cross_entropy(logits: Var, labels: np.ndarray, mask) -> Var:
    """Training objective: mean negative log-likelihood over `mask`"""
    return attack_loss("CE", logits, labels, mask)
