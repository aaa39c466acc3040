"""Error categories shared by every module.

Each error carries a stable ``code`` string and the CLI maps it to a
process exit status.
"""


class RaidsError(Exception):
    code = "ERROR"
    exit_status = 1

    def __init__(self, message: str = "", **context):
        self.context = context
        super().__init__(message or self.code)


def _make(name: str, status: int) -> type:
    return type(name, (RaidsError,), {"code": name, "exit_status": status})


# codec
OutOfRange = _make("OUT_OF_RANGE", 10)
TruncatedFrame = _make("TRUNCATED_FRAME", 11)
BadDlc = _make("BAD_DLC", 12)


class MalformedLine(RaidsError):
    code = "MALFORMED_LINE"
    exit_status = 13

    def __init__(self, message: str, column: int, line: str = ""):
        self.column = column
        self.line = line
        super().__init__(f"{message} (column {column})", column=column)


# nn
ShapeMismatch = _make("SHAPE_MISMATCH", 20)
CheckpointMismatch = _make("CHECKPOINT_MISMATCH", 21)

# context / validator / baseline
ImageTooSmall = _make("IMAGE_TOO_SMALL", 30)
SensorOutOfRange = _make("SENSOR_OUT_OF_RANGE", 31)
DimensionMismatch = _make("DIMENSION_MISMATCH", 32)
SingleClassDataset = _make("SINGLE_CLASS_DATASET", 33)
SequenceTooShort = _make("SEQUENCE_TOO_SHORT", 34)

# intrusion / dataset / eval
EmptyDataset = _make("EMPTY_DATASET", 40)
IoFailure = _make("IO_FAILURE", 41)
MissingImage = _make("MISSING_IMAGE", 42)
MisalignedFrames = _make("MISALIGNED_FRAMES", 43)
SchemaError = _make("SCHEMA_ERROR", 44)
TooFewRecords = _make("TOO_FEW_RECORDS", 45)
LengthMismatch = _make("LENGTH_MISMATCH", 46)
ConfigError = _make("CONFIG_ERROR", 2)
