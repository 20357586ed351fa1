# Author Toshihiko Aoki
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
"""Training loop helper."""

import logging
import math
import os

import torch
from torch.utils.data import DataLoader, RandomSampler, SequentialSampler
from tqdm import tqdm

from .optimization import get_step
from .utils import DivergenceError, make_generator, set_seeds, save, load

logger = logging.getLogger(__name__)


class Helper(object):

    def __init__(self, seeds=20151106, device='cpu', cli_interval=10, use_tb=False, sw_log_dir="runs"):
        super().__init__()
        set_seeds(seeds)
        self.seeds = seeds
        self.device = torch.device(device)
        self.cli_interval = cli_interval
        if use_tb and sw_log_dir is not None and sw_log_dir != '':
            try:
                from torch.utils.tensorboard import SummaryWriter
                self.writer = SummaryWriter(log_dir=sw_log_dir)
            except ImportError:
                logger.warning('tensorboard not available, scalar logging disabled')

    def train(
        self,
        process,
        model,
        dataset,
        optimizer,
        scheduler=None,
        batch_size=1,
        steps=100,
        shuffle=True,
        model_file=None,
        save_dir=None,
        max_grad_norm=None,
        divergence_threshold=1e6,
        desc='train',
    ):
        """Run ``steps`` minibatch updates cycling over ``dataset``.

        ``process(batch, model)`` returns the scalar loss. Returns the per-step
        loss trace.
        """
        model.to(self.device)
        model.train()
        if model_file is not None and model_file != '':
            load(model_file, model, self.device, optimizer)
        global_steps = get_step(optimizer)
        logger.info('Optimizer start steps : {:d}'.format(global_steps))

        if shuffle:
            sampler = RandomSampler(dataset, replacement=False, generator=make_generator(self.seeds))
        else:
            sampler = SequentialSampler(dataset)
        data_loader = DataLoader(dataset, sampler=sampler, batch_size=batch_size)

        trace = []
        total_loss = 0.
        iter_bar = tqdm(range(steps), desc="{} : XX.XXXX avg loss ".format(desc), position=0,
                        mininterval=self.cli_interval)
        batches = iter(data_loader)
        for step in iter_bar:
            try:
                batch = next(batches)
            except StopIteration:
                batches = iter(data_loader)
                batch = next(batches)

            optimizer.zero_grad()
            batch = tuple(t.to(self.device) for t in batch)
            loss = process(batch, model)
            value = loss.item()
            if not math.isfinite(value) or value > divergence_threshold:
                raise DivergenceError('loss diverged at step {}: {}'.format(step, value),
                                      diagnostics={'step': step, 'loss': value, 'trace_tail': trace[-10:]})
            loss.backward()
            if max_grad_norm is not None and max_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), max_grad_norm)
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            global_steps += 1

            trace.append(value)
            total_loss += value
            if hasattr(self, 'writer'):
                self.writer.add_scalar('loss', value, global_steps)
            iter_bar.set_description("{} : {:2.4f} avg loss ".format(desc, total_loss / (step + 1)),
                                     refresh=False)

        if save_dir is not None:
            save(model, os.path.join(save_dir, "train_model.pt"), optimizer)
        return trace
