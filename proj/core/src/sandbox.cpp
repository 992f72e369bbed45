#include "pvrl/sandbox.hpp"

namespace pvrl {

const char* to_string(SandboxErrorKind kind)
{
    switch (kind) {
    case SandboxErrorKind::InitFailure: return "init_failure";
    case SandboxErrorKind::Timeout: return "timeout";
    case SandboxErrorKind::SessionDead: return "session_dead";
    case SandboxErrorKind::ImageLimitExceeded: return "image_limit_exceeded";
    case SandboxErrorKind::BadResponse: return "bad_response";
    case SandboxErrorKind::Unreachable: return "unreachable";
    }
    return "unknown";
}

} // namespace pvrl
