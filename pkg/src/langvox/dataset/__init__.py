from .synthetic import (
    PLANE_CLASSES,
    PlacementError,
    Primitive,
    SyntheticScene,
    SyntheticSceneSpec,
    generate_synthetic_scene,
    render_frame,
)
from .pairs import (
    DECODER_FACTOR,
    ENCODER_FACTOR,
    MIN_PAIRS,
    VOXEL_SIZE,
    IngestError,
    PairSample,
    ScanSequence,
    ingest_scan,
    make_pair,
    read_labels,
    scene_samples,
    write_labels,
    write_scan,
)
from .container import (
    CorruptionError,
    DatasetFormatError,
    DatasetManifest,
    decode_dataset,
    encode_dataset,
    load_dataset,
    read_manifest,
    save_dataset,
)
