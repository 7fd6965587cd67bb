"""Adam with bias correction and decoupled weight decay, over the trainable arrays of a model."""

import numpy as np

from func.base_logger import logger
from data.configs import TrainingDefaults
from data.exceptions import NumericalFailure


class Adam:
    """
    Moments are kept per trainable array name. Frozen arrays (engineered features, cluster
    centers) are never part of params.arrays() and so never touched.
    """

    def __init__(self, params, lr: float = TrainingDefaults.LR, beta1: float = TrainingDefaults.BETA1,
                 beta2: float = TrainingDefaults.BETA2, eps: float = TrainingDefaults.EPS,
                 weight_decay: float = TrainingDefaults.WEIGHT_DECAY):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.mean = {name: np.zeros_like(array) for name, array in params.arrays().items()}
        self.var = {name: np.zeros_like(array) for name, array in params.arrays().items()}

    def __str__(self):
        return (f"Adam(lr={self.lr}, beta1={self.beta1}, beta2={self.beta2}, eps={self.eps}, "
                f"weight_decay={self.weight_decay}, step={self.step_count})")

    def step(self, params, grads: dict[str, np.ndarray]):
        """
        One in-place update of every trainable array. A non-finite gradient aborts the step
        before anything is changed.
        :param params: ProjBParams.
        :param grads: Gradient per trainable array name.
        """
        for name, gradient in grads.items():
            if not np.all(np.isfinite(gradient)):
                logger.critical(f"Non-finite gradient for {name} at step {self.step_count + 1}")
                raise NumericalFailure(f"Non-finite gradient for {name} at step {self.step_count + 1}")

        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count

        for name, param in params.arrays().items():
            gradient = grads[name]
            self.mean[name] = self.beta1 * self.mean[name] + (1.0 - self.beta1) * gradient
            self.var[name] = self.beta2 * self.var[name] + (1.0 - self.beta2) * gradient ** 2
            update = self.lr * (self.mean[name] / correction1) / (np.sqrt(self.var[name] / correction2) + self.eps)
            if self.weight_decay:
                param -= self.weight_decay * param
            param -= update

        params.version += 1
        if not params.is_finite():
            logger.critical(f"Parameters became non-finite at step {self.step_count}")
            raise NumericalFailure(f"Parameters became non-finite at step {self.step_count}")
