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
"""Versioned run configuration shared by every command."""

import json
import os
from typing import NamedTuple, Tuple

from .degradation import DegradationModel
from .finetune import FineTuneConfig
from .inference import InferenceConfig
from .metrics import StabilityConfig
from .models.predictor import (
    LayerSpec, PredictorNetwork, phi_default_specs, baseline_default_specs, check_feature_grid,
)
from .scattering import ScatteringConfig, enumerate_paths
from .training import TrainConfig
from .utils import ConfigError

SCHEMA_VERSION = 1


class PredictorConfig(NamedTuple):
    """ Configuration"""
    phi_layers: Tuple = None           # LayerSpec dicts; None builds the default Phi.
    baseline_layers: Tuple = None      # LayerSpec dicts; None builds the default pixel baseline.
    seed: int = 0

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError('unknown predictor keys: {}'.format(sorted(unknown)))
        values = dict(values)
        for key in ('phi_layers', 'baseline_layers'):
            if values.get(key) is not None:
                values[key] = tuple(LayerSpec.from_dict(v) for v in values[key])
        return cls(**values)

    def to_dict(self):
        return {
            'phi_layers': None if self.phi_layers is None else [
                dict(s._asdict(), kernel=list(s.kernel)) for s in self.phi_layers],
            'baseline_layers': None if self.baseline_layers is None else [
                dict(s._asdict(), kernel=list(s.kernel)) for s in self.baseline_layers],
            'seed': self.seed,
        }

    def build_phi(self, scattering_cfg, size=None):
        channels = len(enumerate_paths(scattering_cfg))
        specs = list(self.phi_layers) if self.phi_layers is not None else phi_default_specs(channels)
        if specs[-1].out_channels != channels:
            raise ConfigError('Phi outputs {} channels but scattering has {}'.format(
                specs[-1].out_channels, channels))
        net = PredictorNetwork(specs, input_channels=1, seed=self.seed)
        if size is not None:
            check_feature_grid(net, scattering_cfg, size)
        return net

    def build_baseline(self):
        specs = list(self.baseline_layers) if self.baseline_layers is not None else baseline_default_specs()
        return PredictorNetwork(specs, input_channels=1, residual_skip=True, seed=self.seed)


SECTIONS = {
    'scattering': ScatteringConfig,
    'degradation': DegradationModel,
    'predictor': PredictorConfig,
    'train': TrainConfig,
    'inference': InferenceConfig,
    'finetune': FineTuneConfig,
    'stability': StabilityConfig,
}


class RunConfig(NamedTuple):
    scattering: ScatteringConfig = ScatteringConfig()
    degradation: DegradationModel = DegradationModel()
    predictor: PredictorConfig = PredictorConfig()
    train: TrainConfig = TrainConfig()
    inference: InferenceConfig = InferenceConfig()
    finetune: FineTuneConfig = FineTuneConfig()
    stability: StabilityConfig = StabilityConfig()
    seed: int = 0

    @classmethod
    def from_dict(cls, values):
        if values.get('schema_version') != SCHEMA_VERSION:
            raise ConfigError('unsupported schema_version: {} - should be {}'.format(
                values.get('schema_version'), SCHEMA_VERSION))
        unknown = set(values) - set(SECTIONS) - {'schema_version', 'seed'}
        if unknown:
            raise ConfigError('unknown config sections: {}'.format(sorted(unknown)))
        sections = {name: SECTIONS[name].from_dict(values.get(name, {})) for name in SECTIONS}
        config = cls(seed=values.get('seed', 0), **sections)
        return config.with_seed(config.seed) if 'seed' in values else config

    @classmethod
    def from_json(cls, file):
        if not os.path.isfile(file):
            raise FileNotFoundError('config not found : ' + str(file))
        with open(file, "r", encoding="UTF-8") as reader:
            try:
                values = json.load(reader)
            except json.JSONDecodeError as error:
                raise ConfigError('malformed config {} : {}'.format(file, error))
        return cls.from_dict(values)

    def with_seed(self, seed):
        return self._replace(
            seed=seed,
            train=self.train._replace(seed=seed),
            inference=self.inference._replace(seed=seed),
            finetune=self.finetune._replace(seed=seed),
        )

    def with_threads(self, threads):
        return self._replace(
            inference=self.inference._replace(threads=threads),
            stability=self.stability._replace(threads=threads),
        )

    def to_dict(self):
        values = {'schema_version': SCHEMA_VERSION, 'seed': self.seed}
        for name in SECTIONS:
            section = getattr(self, name)
            values[name] = section.to_dict() if hasattr(section, 'to_dict') else section._asdict()
        return values

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
