from mitobench.ingest.augment import AugmentPolicy, augment
from mitobench.ingest.images import (
    IMAGE_ROOT_ENV,
    ArrayImageStore,
    FileImageStore,
    ImageStore,
)
from mitobench.ingest.manifest import (
    AnnotationRecord,
    DatasetManifest,
    ImportReport,
    Label,
    import_manifest,
    load_manifest,
    save_manifest,
)
from mitobench.ingest.patches import (
    PatchSpec,
    RandomPatchRecord,
    denormalize,
    extract_patch,
    normalize,
    patch_window,
    sample_random_patch,
)

__all__ = [
    "IMAGE_ROOT_ENV",
    "AnnotationRecord",
    "ArrayImageStore",
    "AugmentPolicy",
    "DatasetManifest",
    "FileImageStore",
    "ImageStore",
    "ImportReport",
    "Label",
    "PatchSpec",
    "RandomPatchRecord",
    "augment",
    "denormalize",
    "extract_patch",
    "import_manifest",
    "load_manifest",
    "normalize",
    "patch_window",
    "sample_random_patch",
    "save_manifest",
]
