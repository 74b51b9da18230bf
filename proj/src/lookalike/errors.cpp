#include "lookalike/errors.h"

namespace lookalike {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MissingFile: return "MissingFile";
        case ErrorKind::Schema: return "SchemaError";
        case ErrorKind::Invariant: return "InvariantError";
        case ErrorKind::Io: return "IoError";
        case ErrorKind::Decode: return "DecodeError";
        case ErrorKind::Shape: return "ShapeError";
        case ErrorKind::ViewCount: return "ViewCountError";
        case ErrorKind::DimMismatch: return "DimMismatch";
        case ErrorKind::Domain: return "DomainError";
        case ErrorKind::DuplicatePair: return "DuplicatePair";
        case ErrorKind::Precondition: return "PreconditionError";
        case ErrorKind::Divergence: return "DivergenceError";
        case ErrorKind::UniverseMismatch: return "UniverseMismatch";
        case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
        case ErrorKind::EmptyDataset: return "EmptyDataset";
        case ErrorKind::NoPairsRemaining: return "NoPairsRemaining";
        case ErrorKind::Validation: return "ValidationError";
        case ErrorKind::Conflict: return "ConflictError";
        case ErrorKind::NothingToUndo: return "NothingToUndo";
        case ErrorKind::NotFound: return "NotFound";
    }
    return "Error";
}

}  // namespace lookalike
