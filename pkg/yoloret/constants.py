# Reference MobileNetV2 stage table: (expansion t, channels c, repeats n, first stride s)
MOBILENETV2_STAGES = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)
STEM_CHANNELS = 32
STEM_STRIDE = 2
# 1x1 conv feeding the classifier in the reference net. Never built for detection.
CLASSIFIER_EXPANSION_CHANNELS = 1280

DEFAULT_TAP_STRIDES = (4, 8, 16, 32)
OUTPUT_STRIDES = (8, 16, 32)
MAX_STRIDE = 32
VALID_RESOLUTIONS = (224, 320, 416)

# YOLOv3 priors in pixels for a 416 input, one triplet per output stride
ANCHOR_REFERENCE_RESOLUTION = 416
DEFAULT_ANCHORS = (
    ((10, 13), (16, 30), (33, 23)),
    ((30, 61), (62, 45), (59, 119)),
    ((116, 90), (156, 198), (373, 326)),
)
NUM_ANCHORS = 3

VOC_CLASSES = (
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
)

# Letterbox padding value for images scaled to [0, 1]
LETTERBOX_FILL = 0.5

# Weight container
WEIGHTS_MAGIC = b"YRW1"
WEIGHTS_VERSION = 1
WEIGHTS_ALIGN = 64

# COCO-style evaluation
COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
VOC_IOU_THRESHOLD = 0.5
AREA_SMALL = 32 ** 2
AREA_LARGE = 96 ** 2
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, AREA_SMALL),
    "medium": (AREA_SMALL, AREA_LARGE),
    "large": (AREA_LARGE, float("inf")),
}
