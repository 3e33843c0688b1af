"""Exception types shared across the package.

Every error carries a machine-readable ``code`` so the CLI can emit
structured error JSON without string-matching messages.
"""


class SherryError(Exception):
    code = "Error"

    def payload(self) -> dict:
        return {"type": self.code, "message": str(self)}


class MissingFile(SherryError):
    code = "MissingFile"


class InvalidManifest(SherryError):
    code = "InvalidManifest"


class InvalidSpec(SherryError):
    code = "InvalidSpec"


class ShapeMismatch(SherryError):
    code = "ShapeMismatch"


class TooManyAdapters(SherryError):
    code = "TooManyAdapters"


class ModeRequiresAdapters(SherryError):
    code = "ModeRequiresAdapters"


class BadTemplate(SherryError):
    code = "BadTemplate"


class ProviderDimMismatch(SherryError):
    code = "ProviderDimMismatch"


class EmptyClassList(SherryError):
    code = "EmptyClassList"


class NotNormalized(SherryError):
    code = "NotNormalized"


class NotNormalizedBank(SherryError):
    code = "NotNormalizedBank"


class NonFinite(SherryError):
    code = "NonFinite"


class LabelOutOfRange(SherryError):
    code = "LabelOutOfRange"


class ArchiveCorrupt(SherryError):
    code = "ArchiveCorrupt"


class BankMismatch(SherryError):
    code = "BankMismatch"


class EmptyGallery(SherryError):
    code = "EmptyGallery"


class ZeroVector(SherryError):
    code = "ZeroVector"


class NoRelevantItems(SherryError):
    code = "NoRelevantItems"


class InsufficientSketches(SherryError):
    code = "InsufficientSketches"


class TooFewSamples(SherryError):
    code = "TooFewSamples"


class ArtifactMismatch(SherryError):
    code = "ArtifactMismatch"


class BadImage(SherryError):
    code = "BadImage"


class PortUnavailable(SherryError):
    code = "PortUnavailable"
