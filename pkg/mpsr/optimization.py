# coding=utf-8
#
# This file is based on:
# https://raw.githubusercontent.com/huggingface/transformers/master/transformers/optimization.py
# reduced to Adam / SGD and two schedules, float64 state.
#
# Copyright 2018 The Google AI Language Team Authors and The HuggingFace Inc. team.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Optimizers and learning-rate schedules for training, inference and fine-tuning."""

import torch
from torch.optim.lr_scheduler import LambdaLR


class ConstantLRSchedule(LambdaLR):
    """ Constant learning rate schedule.
    """
    def __init__(self, optimizer, last_epoch=-1, **_):
        super(ConstantLRSchedule, self).__init__(optimizer, lambda _: 1.0, last_epoch=last_epoch)


class WarmupLinearSchedule(LambdaLR):
    """ Linear warmup and then linear decay.
        Linearly increases learning rate from 0 to 1 over `warmup_steps` training steps.
        Linearly decreases learning rate from 1. to 0. over remaining `t_total - warmup_steps` steps.
    """
    def __init__(self, optimizer, warmup_steps, t_total, last_epoch=-1):
        self.warmup_steps = warmup_steps
        self.t_total = t_total
        super(WarmupLinearSchedule, self).__init__(optimizer, self.lr_lambda, last_epoch=last_epoch)

    def lr_lambda(self, step):
        if step < self.warmup_steps:
            return float(step) / float(max(1, self.warmup_steps))
        return max(0.0, float(self.t_total - step) / float(max(1.0, self.t_total - self.warmup_steps)))


def get_optimizer(params, optimizer_name='adam', lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """torch Adam or plain SGD over ``params`` (a module or an iterable of tensors)."""
    if isinstance(params, torch.nn.Module):
        params = params.parameters()
    if optimizer_name == 'adam':
        return torch.optim.Adam(params, lr=lr, betas=tuple(betas), eps=eps)
    if optimizer_name == 'sgd':
        return torch.optim.SGD(params, lr=lr)
    raise ValueError("Invalid optimizer: {} - should be adam or sgd".format(optimizer_name))


SCHEDULES = {
    None:       ConstantLRSchedule,
    "none":     ConstantLRSchedule,
    "constant": ConstantLRSchedule,
    "warmup_linear": WarmupLinearSchedule,
}


def get_scheduler(optimizer, schedule_type='constant', warmup_steps=0, max_steps=0):
    if schedule_type not in SCHEDULES:
        raise ValueError("Invalid schedule: {}".format(schedule_type))
    schedule_class = SCHEDULES[schedule_type]
    return schedule_class(optimizer, warmup_steps=warmup_steps, t_total=max_steps)


def get_step(optimizer):
    for group in optimizer.param_groups:
        for p in group['params']:
            state = optimizer.state.get(p, {})
            if 'step' in state:
                return int(state['step'])
    return 0
