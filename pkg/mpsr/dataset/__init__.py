from .image_io import load_image, save_image, list_images
from .patch_dataset import DatasetManifest, PatchTriple, PatchDataset, extract_patches
