#include "balance_lab/error.hpp"

namespace balance_lab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MALFORMED_LINE";
    case ErrorCode::MissingField: return "MISSING_FIELD";
    case ErrorCode::EmptyLog: return "EMPTY_LOG";
    case ErrorCode::BadPolicyParam: return "BAD_POLICY_PARAM";
    case ErrorCode::UnknownState: return "UNKNOWN_STATE";
    case ErrorCode::MissingPotential: return "MISSING_POTENTIAL";
    case ErrorCode::EmptyKernel: return "EMPTY_KERNEL";
    case ErrorCode::NoConvergence: return "NO_CONVERGENCE";
    case ErrorCode::NotTreeReducible: return "NOT_TREE_REDUCIBLE";
    case ErrorCode::TooFewStates: return "TOO_FEW_STATES";
    case ErrorCode::NegativeSigma: return "NEGATIVE_SIGMA";
    case ErrorCode::BadConfig: return "BAD_CONFIG";
    case ErrorCode::DivideByZero: return "DIVIDE_BY_ZERO";
    case ErrorCode::NonAlphabetic: return "NON_ALPHABETIC";
    case ErrorCode::InvalidSeedWord: return "INVALID_SEED_WORD";
    case ErrorCode::RemoteUnreachable: return "REMOTE_UNREACHABLE";
    case ErrorCode::BadParams: return "BAD_PARAMS";
    case ErrorCode::Io: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace balance_lab
