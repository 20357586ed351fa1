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
"""for training and fine-tuning patch manifest file"""

from mpsr.dataset.patch_dataset import DatasetManifest

if __name__ == '__main__':
    import argparse

    parser = argparse.ArgumentParser(description='Image dataset manifest.', usage='%(prog)s [options]')
    parser.add_argument('--image_dir', help='Image folder (png, pgm, ppm, bmp, tif or npy).', nargs='?',
                        type=str, required=True)
    parser.add_argument('--output_path', help='Manifest JSON output path.', nargs='?',
                        type=str, default='data/manifest.json')
    parser.add_argument('--patch_size', help='High-resolution patch side.', nargs='?',
                        type=int, default=64)
    parser.add_argument('--patches_per_image', help='Patches drawn from each image.', nargs='?',
                        type=int, default=2)
    parser.add_argument('--seed', help='Patch sampling seed.', nargs='?',
                        type=int, default=0)
    args = parser.parse_args()

    manifest = DatasetManifest.build(
        args.image_dir,
        patch_size=args.patch_size,
        patches_per_image=args.patches_per_image,
        seed=args.seed
    )
    manifest.save(args.output_path)
    print('{} images -> {}'.format(len(manifest.entries), args.output_path))
