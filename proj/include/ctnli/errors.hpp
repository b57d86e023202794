#pragma once

#include <stdexcept>
#include <string>

namespace ctnli {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// corpus
struct MissingSection : Error { using Error::Error; };
struct DuplicateTrialId : Error { using Error::Error; };
struct MalformedFile : Error { using Error::Error; };
struct UnknownLabel : Error { using Error::Error; };
struct UnknownSection : Error { using Error::Error; };
struct MissingPrimaryId : Error { using Error::Error; };
struct DanglingTrialRef : Error { using Error::Error; };
struct DanglingBaseUuid : Error { using Error::Error; };

// retrieval
struct DuplicateDocId : Error { using Error::Error; };

// prompting
struct ExplanationNotAllowed : Error { using Error::Error; };
struct MissingExplanation : Error { using Error::Error; };

// inference
struct Timeout : Error { using Error::Error; };
struct RateLimited : Error { using Error::Error; };
struct AuthFailure : Error { using Error::Error; };
struct MalformedResponse : Error { using Error::Error; };
struct TransientFailure : Error { using Error::Error; };

// evaluation
struct MissingGold : Error { using Error::Error; };
struct MissingLineage : Error { using Error::Error; };
struct EmptyContrastSet : Error { using Error::Error; };
struct EmptyPreservingSet : Error { using Error::Error; };

// adapters
struct BadHeader : Error { using Error::Error; };
struct TruncatedData : Error { using Error::Error; };
struct UnsupportedElementType : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct KeyMismatch : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct MetaMismatch : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct KinkDetected : Error { using Error::Error; };

// contamination
struct TooShort : Error { using Error::Error; };

// cli
struct ConfigError : Error { using Error::Error; };
struct LockHeld : Error { using Error::Error; };

} // namespace ctnli
