#include "vstab/error.hpp"

namespace vstab {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::NotRigid: return "NotRigid";
        case ErrorCode::Singular: return "Singular";
        case ErrorCode::MissingFrame: return "MissingFrame";
        case ErrorCode::CorruptImage: return "CorruptImage";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::InsufficientHistory: return "InsufficientHistory";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::DegenerateFlow: return "DegenerateFlow";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::GraphNotRecorded: return "GraphNotRecorded";
        case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
        case ErrorCode::SpecMismatch: return "SpecMismatch";
        case ErrorCode::EmptyOverlap: return "EmptyOverlap";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::TooShort: return "TooShort";
    }
    return "Unknown";
}

}  // namespace vstab
