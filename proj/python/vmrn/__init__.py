"""Object detection plus manipulation-relationship trees (grasping order).

The heavy lifting lives in the compiled extension; this package re-exports
its surface. Relation labels are integers: 1 = parent-of, 2 = child-of,
3 = no relationship.
"""

from vmrn._core import (  # noqa: F401
    InvalidInput,
    IoError,
    Model,
    adaptive_maxpool,
    annotation_tree,
    build_tree,
    class_names,
    crop_pool,
    decode_offsets,
    encode_offsets,
    enumerate_pairs,
    evaluate,
    gen_scene,
    gradient_checks,
    iou,
    leaf_nodes,
    reconcile,
    train,
    tree_dot,
    tree_to_labels,
    union_box,
    validate_tree,
    write_corpus,
)

PARENT_OF = 1
CHILD_OF = 2
NO_REL = 3

__all__ = [
    "InvalidInput",
    "IoError",
    "Model",
    "PARENT_OF",
    "CHILD_OF",
    "NO_REL",
    "adaptive_maxpool",
    "annotation_tree",
    "build_tree",
    "class_names",
    "crop_pool",
    "decode_offsets",
    "encode_offsets",
    "enumerate_pairs",
    "evaluate",
    "gen_scene",
    "gradient_checks",
    "iou",
    "leaf_nodes",
    "reconcile",
    "train",
    "tree_dot",
    "tree_to_labels",
    "union_box",
    "validate_tree",
    "write_corpus",
]
